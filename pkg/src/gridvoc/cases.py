"""Builtin cases, profiles and scenarios, plus JSON (de)serialization."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dvoc import GainSettings
from .errors import ParseError, ValidationError
from .netmodel import Bus, LineBranch, NetworkCase, check_connected
from .setpoints import SetpointProfile, solve_angles
from .simcore import Event, InitialCondition, Scenario

# --- three-bus transmission example ------------------------------------------

THREEBUS_OHM_PER_KM = (0.03, 0.3)
THREEBUS_LINES = ((1, 2, 125.0), (1, 3, 25.0), (2, 3, 25.0))
THREEBUS_P = (-0.52, -0.19, 0.71)
THREEBUS_Q = (0.06, 0.021, -0.06)
THREEBUS_GAINS = dict(eta=3e-3, alpha=5.0)


def threebus_case() -> NetworkCase:
    s_base, v_base = 1e9, 320e3
    z_base = v_base ** 2 / s_base
    r_km, x_km = THREEBUS_OHM_PER_KM
    buses = [Bus(str(k)) for k in (1, 2, 3)]
    branches = [LineBranch(a - 1, b - 1, r_km * km / z_base, x_km * km / z_base) for a, b, km in THREEBUS_LINES]
    return NetworkCase(buses, branches, 2 * np.pi * 50, s_base, v_base, "threebus")


def threebus_profile(case: NetworkCase | None = None) -> SetpointProfile:
    """Listed set-points completed by the angle solver (inverter 1 takes the losses)."""
    case = case or threebus_case()
    return solve_angles(case, THREEBUS_P, np.ones(3))


def threebus_listed_profile(case: NetworkCase | None = None) -> SetpointProfile:
    """Listed (rounded) set-points with solved angles, without completion."""
    solved = threebus_profile(case)
    return SetpointProfile(THREEBUS_P, THREEBUS_Q, np.ones(3), solved.theta_star)


# --- IEEE 9-bus, structure preserving ---------------------------------------
# Standard case data on a 100 MVA / 345 kV base: (from, to, r, x, b).
IEEE9_BRANCHES = (
    (1, 4, 0.0, 0.0576, 0.0),
    (4, 5, 0.017, 0.092, 0.158),
    (5, 6, 0.039, 0.17, 0.358),
    (3, 6, 0.0, 0.0586, 0.0),
    (6, 7, 0.0119, 0.1008, 0.209),
    (7, 8, 0.0085, 0.072, 0.149),
    (8, 2, 0.0, 0.0625, 0.0),
    (8, 9, 0.032, 0.161, 0.306),
    (9, 4, 0.01, 0.085, 0.176),
)
IEEE9_LOADS = {5: (0.90, 0.30), 7: (1.00, 0.35), 9: (1.25, 0.50)}
IEEE9_DISPATCH = {2: 1.63, 3: 0.85}
IEEE9_GAINS = dict(eta=1e-3, alpha=10.0)
# lossless transformer branches get r = x / TRANSFORMER_XR
TRANSFORMER_XR = 100.0


def ieee9_case() -> NetworkCase:
    inverters = [Bus(str(k)) for k in (1, 2, 3)]
    shunt = {k: 0.0 for k in range(4, 10)}
    for a, b, _, _, bsh in IEEE9_BRANCHES:
        for end in (a, b):
            if end in shunt:
                shunt[end] += bsh / 2
    passive = []
    for k in range(4, 10):
        load_r = load_x = None
        if k in IEEE9_LOADS:
            p, q = IEEE9_LOADS[k]
            s2 = p * p + q * q
            load_r, load_x = p / s2, q / s2
        passive.append(Bus(str(k), "passive", shunt[k], load_r, load_x))
    buses = inverters + passive
    index = {int(b.id): n for n, b in enumerate(buses)}
    branches = []
    for a, b, r, x, _ in IEEE9_BRANCHES:
        r = r if r > 0 else x / TRANSFORMER_XR
        branches.append(LineBranch(index[a], index[b], r, x))
    return NetworkCase(buses, branches, 2 * np.pi * 50, 100e6, 345e3, "ieee9")


def ieee9_profile(case: NetworkCase | None = None) -> SetpointProfile:
    case = case or ieee9_case()
    p = np.array([0.0, IEEE9_DISPATCH[2], IEEE9_DISPATCH[3]])
    return solve_angles(case, p, np.ones(3))


def ieee9_events() -> Scenario:
    return Scenario(
        duration=15.0, cadence=1e-3, name="paper-events",
        initial=InitialCondition("black_start", 1e-4, 42),
        events=(Event(5.0, "load_step", "5", p_scale=1.2), Event(10.0, "inverter_loss", "1")))


BUILTIN_CASES = {"threebus": threebus_case, "ieee9": ieee9_case}
BUILTIN_PROFILES = {"threebus": threebus_profile, "ieee9": ieee9_profile}
BUILTIN_GAINS = {"threebus": THREEBUS_GAINS, "ieee9": IEEE9_GAINS}
BUILTIN_SCENARIOS = {"paper-events": ieee9_events}


def default_gains(case: NetworkCase, eta=None, alpha=None, kappa=None, pu_time=True) -> GainSettings:
    base = BUILTIN_GAINS.get(case.name, {})
    eta = base.get("eta") if eta is None else eta
    alpha = base.get("alpha") if alpha is None else alpha
    if eta is None or alpha is None:
        raise ValidationError("gains eta and alpha are required for this case")
    return GainSettings.for_case(case, eta, alpha, kappa, pu_time)


# --- JSON --------------------------------------------------------------------

def _read_json(source) -> dict:
    if isinstance(source, dict):
        return source
    path = Path(source)
    if not path.exists():
        raise ValidationError(f"file not found: {source}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _num(d: dict, key: str, where: str) -> float:
    try:
        val = float(d[key])
    except KeyError:
        raise ParseError(f"{where}: missing field {key!r}") from None
    except (TypeError, ValueError):
        raise ParseError(f"{where}: field {key!r} is not a number") from None
    return val


def case_from_dict(d: dict) -> NetworkCase:
    where = "case"
    f0 = _num(d, "omega0_hz", where)
    s_base = _num(d, "base_power_w", where)
    v_base = _num(d, "base_voltage_v", where)
    if not (f0 > 0 and s_base > 0 and v_base > 0):
        raise ValidationError("omega0_hz, base_power_w and base_voltage_v must be positive")
    w0 = 2 * np.pi * f0
    zb = v_base ** 2 / s_base
    raw_buses = d.get("buses")
    raw_branches = d.get("branches")
    if not isinstance(raw_buses, list) or not isinstance(raw_branches, list):
        raise ParseError("case: 'buses' and 'branches' must be lists")
    buses = []
    for n, b in enumerate(raw_buses):
        where = f"buses[{n}]"
        if "id" not in b:
            raise ParseError(f"{where}: missing field 'id'")
        kind = b.get("kind", "inverter")
        shunt = load_r = load_x = None
        if "shunt_b_pu" in b:
            shunt = _num(b, "shunt_b_pu", where)
        elif "shunt_c" in b or "shunt_c_f" in b:
            shunt = w0 * _num(b, "shunt_c" if "shunt_c" in b else "shunt_c_f", where) * zb
        if "load_r_pu" in b or "load_x_pu" in b:
            load_r, load_x = _num(b, "load_r_pu", where), _num(b, "load_x_pu", where)
        elif any(k in b for k in ("load_r", "load_l", "load_r_ohm", "load_l_h")):
            load_r = _num(b, "load_r" if "load_r" in b else "load_r_ohm", where) / zb
            load_x = w0 * _num(b, "load_l" if "load_l" in b else "load_l_h", where) / zb
        try:
            buses.append(Bus(str(b["id"]), kind, shunt, load_r, load_x))
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
    order = [b for b in buses if b.kind == "inverter"] + [b for b in buses if b.kind == "passive"]
    index = {b.id: n for n, b in enumerate(order)}
    branches = []
    for n, br in enumerate(raw_branches):
        where = f"branches[{n}]"
        for key in ("from", "to"):
            if key not in br:
                raise ParseError(f"{where}: missing field {key!r}")
            if str(br[key]) not in index:
                raise ValidationError(f"{where}: unknown bus {br[key]!r}")
        if "r_pu" in br:
            r, x = _num(br, "r_pu", where), _num(br, "x_pu", where)
        else:
            r = _num(br, "r_ohm", where) / zb
            x = (_num(br, "x_ohm", where) if "x_ohm" in br else w0 * _num(br, "l_h", where)) / zb
        try:
            branches.append(LineBranch(index[str(br["from"])], index[str(br["to"])], r, x))
        except ValidationError as exc:
            raise ValidationError(f"{where} ({br['from']}-{br['to']}): {exc}") from None
    case = NetworkCase(order, branches, w0, s_base, v_base, str(d.get("name", "")))
    check_connected(case)
    return case


def case_to_dict(case: NetworkCase) -> dict:
    buses = []
    for b in case.buses:
        entry = {"id": b.id, "kind": b.kind}
        if b.kind == "passive":
            entry["shunt_b_pu"] = b.shunt_b
            if b.has_load:
                entry["load_r_pu"], entry["load_x_pu"] = b.load_r, b.load_x
        buses.append(entry)
    branches = [{"from": case.buses[br.from_bus].id, "to": case.buses[br.to_bus].id,
                 "r_pu": br.resistance, "x_pu": br.reactance} for br in case.branches]
    return {"name": case.name, "omega0_hz": case.omega0 / (2 * np.pi), "base_power_w": case.base_power,
            "base_voltage_v": case.base_voltage, "buses": buses, "branches": branches}


def load_case(source) -> NetworkCase:
    if isinstance(source, str) and source in BUILTIN_CASES:
        return BUILTIN_CASES[source]()
    return case_from_dict(_read_json(source))


def case_hash(case: NetworkCase) -> str:
    blob = json.dumps(case_to_dict(case), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def profile_from_dict(d: dict, case: NetworkCase) -> SetpointProfile:
    rows = d.get("inverters")
    if not isinstance(rows, list) or len(rows) != case.n_inverters:
        raise ParseError(f"profile: expected 'inverters' list with {case.n_inverters} entries")
    if all("bus" in r for r in rows):
        rows = sorted(rows, key=lambda r: case.index_of(r["bus"]))
    p = [_num(r, "p_star", f"inverters[{n}]") for n, r in enumerate(rows)]
    q = [_num(r, "q_star", f"inverters[{n}]") for n, r in enumerate(rows)]
    v = [_num(r, "v_star", f"inverters[{n}]") for n, r in enumerate(rows)]
    th = None
    if all("theta_star" in r for r in rows):
        th = [_num(r, "theta_star", f"inverters[{n}]") for n, r in enumerate(rows)]
    return SetpointProfile(p, q, v, th)


def profile_to_dict(profile: SetpointProfile, case: NetworkCase) -> dict:
    rows = []
    for k in range(profile.n):
        row = {"bus": case.buses[k].id, "p_star": float(profile.p_star[k]), "q_star": float(profile.q_star[k]),
               "v_star": float(profile.v_star[k])}
        if profile.theta_star is not None:
            row["theta_star"] = float(profile.theta_star[k])
        rows.append(row)
    return {"inverters": rows}


def load_profile(source, case: NetworkCase) -> SetpointProfile:
    if source is None:
        if case.name in BUILTIN_PROFILES:
            return BUILTIN_PROFILES[case.name](case)
        raise ValidationError("no profile given and the case has no builtin profile")
    if isinstance(source, str) and source in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[source](case)
    return profile_from_dict(_read_json(source), case)


def scenario_from_dict(d: dict) -> Scenario:
    init = d.get("initial", {})
    initial = InitialCondition(init.get("kind", "black_start"), float(init.get("magnitude", 1e-4)),
                               int(init.get("seed", 42)), tuple(init["state"]) if "state" in init else None)
    events = []
    for n, e in enumerate(d.get("events", [])):
        where = f"events[{n}]"
        if "kind" not in e or "bus" not in e:
            raise ParseError(f"{where}: needs 'kind' and 'bus'")
        opt = {k: float(e[k]) for k in ("scale", "p_scale", "p_star", "q_star", "v_star") if k in e}
        events.append(Event(_num(e, "time", where), e["kind"], str(e["bus"]), **opt))
    return Scenario(_num(d, "duration", "scenario"), float(d.get("cadence", 1e-3)), initial, tuple(events),
                    str(d.get("name", "")))


def scenario_to_dict(sc: Scenario) -> dict:
    init = {"kind": sc.initial.kind, "magnitude": sc.initial.magnitude, "seed": sc.initial.seed}
    if sc.initial.state is not None:
        init["state"] = list(sc.initial.state)
    events = []
    for e in sc.events:
        row = {"time": e.time, "kind": e.kind, "bus": e.bus}
        for k in ("scale", "p_scale", "p_star", "q_star", "v_star"):
            if getattr(e, k) is not None:
                row[k] = getattr(e, k)
        events.append(row)
    return {"name": sc.name, "duration": sc.duration, "cadence": sc.cadence, "initial": init, "events": events}


def load_scenario(source) -> Scenario:
    if isinstance(source, str) and source in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[source]()
    return scenario_from_dict(_read_json(source))
