import sys

import pytest

from gridvoc.cases import default_gains, ieee9_case, ieee9_profile, threebus_case, threebus_profile


@pytest.fixture(scope="session")
def threebus():
    case = threebus_case()
    return case, threebus_profile(case), default_gains(case)


@pytest.fixture(scope="session")
def ieee9():
    case = ieee9_case()
    return case, ieee9_profile(case), default_gains(case)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
