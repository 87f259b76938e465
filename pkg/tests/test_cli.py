import json

import numpy as np
import pytest

from gridvoc import cases
from gridvoc.cli import main
from gridvoc.errors import ParseError, ValidationError
from gridvoc.linstab import line_admittance_si


def _short_scenario(tmp_path, duration=0.02, seed=7):
    path = tmp_path / "short.json"
    path.write_text(json.dumps({"name": "short", "duration": duration, "cadence": 1e-3,
                                "initial": {"kind": "black_start", "magnitude": 1e-4, "seed": seed}}))
    return str(path)


def test_builtin_threebus_admittances():
    case = cases.load_case("threebus")
    assert (case.n_buses, case.n_branches) == (3, 3)
    assert case.base_power == 1e9 and case.base_voltage == 320e3
    assert case.omega0 == pytest.approx(2 * np.pi * 50)
    adm = sorted(line_admittance_si(case, l) for l in range(3))
    assert np.allclose(adm, [0.0265, 0.1327, 0.1327], atol=5e-5)


def test_negative_resistance_names_branch():
    d = cases.case_to_dict(cases.load_case("threebus"))
    d["branches"][1]["r_pu"] = -0.01
    with pytest.raises(ValidationError, match=r"branches\[1\]"):
        cases.case_from_dict(d)
    d["branches"][1].pop("r_pu")
    with pytest.raises(ParseError):
        cases.case_from_dict(d)


def test_case_round_trip(tmp_path):
    for name in ("threebus", "ieee9"):
        case = cases.load_case(name)
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cases.case_to_dict(case)))
        again = cases.load_case(str(path))
        assert cases.case_to_dict(again) == cases.case_to_dict(case)
        assert cases.case_hash(again) == cases.case_hash(case)


def test_certify_json(tmp_path, capsys):
    assert main(["certify", "--case", "threebus", "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["angle_form"]["c_max"] > 0 and cert["angle_form"]["eta_bound"] > 0
    assert "power_form" in cert and "lyapunov_constants" in cert
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["artifacts"] == ["certificate.json"]
    assert json.loads(capsys.readouterr().out)["angle_form"]["c"] == pytest.approx(cert["angle_form"]["c_max"] / 2)


def test_fixed_step_runs_are_byte_identical(tmp_path):
    sc = _short_scenario(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        main(["simulate", "--scenario", sc, "--fixed-step", "--dt", "1e-5", "--eta", "1e-3", "--out", str(o)])
    a, b = [(o / "timeseries.csv").read_bytes() for o in outs]
    assert a == b and len(a) > 1000
    assert a.splitlines()[0] == b"t,bus,vx,vy,vmag,freq_hz,p,q,iomag"


def test_manifest_is_sufficient_to_rerun(tmp_path):
    sc = _short_scenario(tmp_path)
    first = tmp_path / "first"
    main(["simulate", "--scenario", sc, "--fixed-step", "--eta", "1e-3", "--seed", "3", "--out", str(first)])
    m = json.loads((first / "manifest.json").read_text())
    assert {"config", "case_hash", "case", "versions", "seed", "wall_time_s", "artifacts"} <= set(m)
    # rebuild the command from the manifest alone
    case_file = tmp_path / "case.json"
    case_file.write_text(json.dumps(m["case"]))
    c = m["config"]
    argv = ["simulate", "--case", str(case_file), "--scenario", c["scenario"], "--eta", str(c["eta"]),
            "--seed", str(m["seed"]), "--out", str(tmp_path / "second")]
    if c["integrator"].get("method") == "RK4":
        argv.append("--fixed-step")
    main(argv)
    assert (tmp_path / "second" / "timeseries.csv").read_bytes() == (first / "timeseries.csv").read_bytes()


def test_seed_env_override(tmp_path, monkeypatch):
    sc = _short_scenario(tmp_path)
    monkeypatch.setenv("DVOC_SEED", "123")
    main(["simulate", "--scenario", sc, "--fixed-step", "--eta", "1e-3", "--seed", "5", "--out", str(tmp_path / "o")])
    assert json.loads((tmp_path / "o" / "metadata.json").read_text())["seed"] == 123
    monkeypatch.setenv("DVOC_SEED", "abc")
    assert main(["certify"]) == 2


def test_exit_codes(tmp_path, capsys):
    assert main(["certify", "--eta", "-1"]) == 2
    assert main(["certify", "--case", "nowhere.json"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["linearize", "--case", str(bad), "--out", str(tmp_path / "e")]) == 2
    payload = json.loads((tmp_path / "e" / "error.json").read_text())
    assert payload["exit_code"] == 2 and payload["error"]
    # certify on a case with passive buses is outside the certificate's assumptions
    assert main(["certify", "--case", "ieee9"]) == 2


def test_short_unsettled_run_exits_4(tmp_path):
    sc = _short_scenario(tmp_path, duration=0.6)
    code = main(["simulate", "--scenario", sc, "--eta", "1e-3", "--out", str(tmp_path / "o")])
    assert code == 4
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["status"] == "unstable"
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["status"] == "unstable"


def test_linearize_and_sweeps(tmp_path):
    assert main(["linearize", "--eta", "1e-3", "--out", str(tmp_path / "lin")]) == 0
    rows = (tmp_path / "lin" / "eigenvalues.csv").read_text().splitlines()
    assert rows[0] == "re,im,zeta" and len(rows) == 1 + 12
    assert main(["sweep-admittance", "--line", "1-2", "--values", "0.03:0.3:4", "--out", str(tmp_path / "sw")]) == 0
    assert (tmp_path / "sw" / "sweep.csv").read_text().splitlines()[0] == "value,zeta_min"
    assert main(["sweep-gains", "--alphas", "1,5", "--etas", "1e-1", "--out", str(tmp_path / "g")]) == 0
    lines = (tmp_path / "g" / "regions.csv").read_text().splitlines()
    assert lines[0] == "alpha,eta,region,zeta_min" and len(lines) == 3
    assert main(["sweep-admittance", "--line", "1", "--values", "0.1"]) == 2


def test_setpoints_solve(tmp_path):
    assert main(["setpoints", "solve", "--p", "0.1,-0.05,0", "--out", str(tmp_path)]) == 0
    prof = json.loads((tmp_path / "profile.json").read_text())
    assert prof["consistency_residual"] < 1e-9
    assert abs(sum(r["p_star"] for r in prof["inverters"])) < 0.05


def test_audit_of_certified_run(tmp_path):
    run = tmp_path / "run"
    sc = _short_scenario(tmp_path, duration=0.3)
    main(["simulate", "--scenario", sc, "--eta", "5e-5", "--out", str(run)])
    assert main(["audit", "--run", str(run), "--out", str(tmp_path / "aud")]) == 0
    rep = json.loads((tmp_path / "aud" / "audit.json").read_text())
    assert rep["certified"] and rep["passed"] and rep["violations"] == 0
