"""Command-line front end: ``gridvoc <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import cases
from .certify import condition2, decrease_audit, lyapunov_constants, prop2_powerform
from .dvoc import GainSettings
from .errors import GridVocError, ValidationError
from .linstab import (GainSweepSettings, default_gain_grid, linearize, origin_instability, sweep_admittance,
                      sweep_gains)
from .setpoints import solve_angles, verify_consistency
from .simcore import IntegratorSettings, derived_channels, run_scenario, settling_check

VERSION = "0.1.0"
COMMANDS = ("simulate", "certify", "audit", "linearize", "sweep-admittance", "sweep-gains", "setpoints")


@dataclass
class RunConfig:
    command: str
    case: str = "threebus"
    profile: str | None = None
    scenario: str | None = None
    eta: float | None = None
    alpha: float | None = None
    kappa: float | None = None
    pu_time: bool = True
    out: str | None = None
    seed: int | None = None
    integrator: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _dump(obj, path: Path | None = None) -> str:
    text = json.dumps(obj, indent=2, default=_json_default, sort_keys=True)
    if path is not None:
        path.write_text(text + "\n")
    return text


def resolve_case(ref: str):
    if ref in cases.BUILTIN_CASES:
        return cases.BUILTIN_CASES[ref]()
    if not Path(ref).exists():
        raise ValidationError(f"case {ref!r} is neither a builtin ({', '.join(cases.BUILTIN_CASES)}) nor a file")
    return cases.load_case(ref)


def resolve_profile(ref: str | None, case):
    if ref is None:
        if case.name in cases.BUILTIN_PROFILES:
            return cases.BUILTIN_PROFILES[case.name](case)
        raise ValidationError("this case needs --profile")
    if not Path(ref).exists():
        raise ValidationError(f"profile file {ref!r} not found")
    return cases.load_profile(ref, case)


def resolve_scenario(ref: str | None, seed: int | None):
    if ref is None:
        ref = "paper-events"
    if ref in cases.BUILTIN_SCENARIOS:
        sc = cases.BUILTIN_SCENARIOS[ref]()
    elif Path(ref).exists():
        sc = cases.load_scenario(ref)
    else:
        raise ValidationError(f"scenario {ref!r} is neither a builtin nor a file")
    if seed is not None:
        sc = replace(sc, initial=replace(sc.initial, seed=int(seed)))
    return sc


def _gains(cfg: RunConfig, case):
    return cases.default_gains(case, cfg.eta, cfg.alpha, cfg.kappa, cfg.pu_time)


def _integrator(cfg: RunConfig) -> IntegratorSettings:
    return IntegratorSettings(**cfg.integrator)


def _outdir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(out: Path, cfg: RunConfig, case, started: float, artifacts: list, status: str):
    manifest = {
        "command": cfg.command,
        "config": asdict(cfg),
        "argv": sys.argv[1:],
        "case_hash": cases.case_hash(case) if case is not None else None,
        "case": cases.case_to_dict(case) if case is not None else None,
        "versions": {"gridvoc": VERSION, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "seed": cfg.seed,
        "wall_time_s": time.time() - started,
        "artifacts": artifacts,
        "status": status,
    }
    _dump(manifest, out / "manifest.json")


# --- commands -------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path | None):
    case = resolve_case(cfg.case)
    profile = resolve_profile(cfg.profile, case)
    gains = _gains(cfg, case)
    scenario = resolve_scenario(cfg.scenario, cfg.seed)
    settings = _integrator(cfg)
    ts = run_scenario(case, profile, gains, scenario, settings)
    ch = derived_channels(case, ts)
    settle = settling_check(case, ts, channels=ch)
    status = "diverged" if ts.diverged else ("unstable" if not settle.settled else "ok")
    meta = {"case_hash": cases.case_hash(case), "case_name": case.name,
            "gains": asdict(gains), "gain_rate_per_second": gains.rate,
            "seed": scenario.initial.seed, "integrator": asdict(settings),
            "scenario": cases.scenario_to_dict(scenario), "profile": cases.profile_to_dict(profile, case),
            "status": status, "diverged": ts.diverged, "reason": ts.reason or settle.reason,
            "settling": settle.segments, "samples": len(ts.times)}
    artifacts = []
    if out is not None:
        ids = [b.id for b in case.buses[:case.n_inverters]]
        with open(out / "timeseries.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "bus", "vx", "vy", "vmag", "freq_hz", "p", "q", "iomag"])
            for k, t in enumerate(ch.times):
                for n, bid in enumerate(ids):
                    w.writerow([_fmt(t), bid, _fmt(ch.v[k, n, 0]), _fmt(ch.v[k, n, 1]), _fmt(ch.vmag[k, n]),
                                _fmt(ch.freq_hz[k, n]), _fmt(ch.p[k, n]), _fmt(ch.q[k, n]), _fmt(ch.iomag[k, n])])
        np.savez_compressed(out / "states.npz", times=ts.times, states=ts.states)
        _dump(meta, out / "metadata.json")
        artifacts = ["timeseries.csv", "states.npz", "metadata.json"]
    code = 4 if status != "ok" else 0
    return meta, case, artifacts, code


def cmd_certify(cfg: RunConfig, out: Path | None):
    case = resolve_case(cfg.case)
    profile = resolve_profile(cfg.profile, case)
    gains = _gains(cfg, case)
    c = cfg.extra.get("c")
    variant = cfg.extra.get("variant", "both")
    report = {"gains": asdict(gains), "c_default": "half of c_max" if c is None else "given"}
    if variant in ("angle", "both"):
        report["angle_form"] = condition2(case, profile, gains, c).to_dict()
    if variant in ("power", "both"):
        report["power_form"] = prop2_powerform(case, profile, gains, c).to_dict()
    if "angle_form" in report and report["angle_form"]["c"] > 0:
        k = lyapunov_constants(case, profile, gains, report["angle_form"]["c"])
        report["lyapunov_constants"] = k.as_dict()
    report["origin_max_real"] = origin_instability(case, profile, gains).max_real
    if out is not None:
        _dump(report, out / "certificate.json")
    return report, case, ["certificate.json"] if out else [], 0


def cmd_audit(cfg: RunConfig, out: Path | None):
    run = Path(cfg.extra["run"])
    meta_path, states_path = run / "metadata.json", run / "states.npz"
    if not meta_path.exists() or not states_path.exists():
        raise ValidationError(f"{run} does not contain a simulation output")
    meta = json.loads(meta_path.read_text())
    manifest = json.loads((run / "manifest.json").read_text()) if (run / "manifest.json").exists() else {}
    case = cases.case_from_dict(manifest["case"]) if manifest.get("case") else resolve_case(meta["case_name"])
    profile = cases.profile_from_dict(meta["profile"], case)
    g = meta["gains"]
    gains = GainSettings(**g)
    data = np.load(states_path)
    times, states = data["times"], data["states"]
    sc = cases.scenario_from_dict(meta["scenario"])
    if sc.events:
        # only the configuration before the first event matches the stored case
        states = states[times <= sc.events[0].time + 1e-12]
    kind = cfg.extra.get("kind", "full")
    rep = decrease_audit(case, profile, gains, states, kind)
    report = rep.to_dict()
    report["certified"] = condition2(case, profile, gains).ok
    if out is not None:
        _dump(report, out / "audit.json")
    return report, case, ["audit.json"] if out else [], 0


def cmd_linearize(cfg: RunConfig, out: Path | None):
    case = resolve_case(cfg.case)
    profile = resolve_profile(cfg.profile, case)
    gains = _gains(cfg, case)
    res = linearize(case, profile, gains)
    report = {"zeta_min": res.zeta_min, "regular": res.regular, "stable": res.stable,
              "max_real": res.max_real, "n_states": int(res.eigenvalues.size)}
    artifacts = []
    if out is not None:
        with open(out / "eigenvalues.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["re", "im", "zeta"])
            for lam, z in zip(res.eigenvalues, res.zeta):
                w.writerow([_fmt(lam.real), _fmt(lam.imag), _fmt(z)])
        _dump(report, out / "linearization.json")
        artifacts = ["eigenvalues.csv", "linearization.json"]
    return report, case, artifacts, 0


def _parse_range(text: str, log: bool = False) -> np.ndarray:
    """``a:b:n`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            f = np.geomspace if log else np.linspace
            return f(float(a), float(b), int(n))
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ValidationError(f"cannot parse range {text!r}") from exc


def cmd_sweep_admittance(cfg: RunConfig, out: Path | None):
    case = resolve_case(cfg.case)
    profile = resolve_profile(cfg.profile, case)
    gains = _gains(cfg, case)
    line = cfg.extra["line"].split("-")
    if len(line) != 2:
        raise ValidationError("--line must look like FROM-TO")
    values = _parse_range(cfg.extra["values"])
    res = sweep_admittance(case, profile, gains, tuple(line), values, workers=cfg.extra.get("workers"))
    report = {**res.meta, "crossing": res.crossing(), "points": len(values)}
    artifacts = []
    if out is not None:
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "zeta_min"])
            for v, z in zip(values, res.zeta_min):
                w.writerow([_fmt(v), _fmt(z)])
        _dump(report, out / "sweep.json")
        artifacts = ["sweep.csv", "sweep.json"]
    return report, case, artifacts, 0


def cmd_sweep_gains(cfg: RunConfig, out: Path | None):
    case = resolve_case(cfg.case)
    profile = resolve_profile(cfg.profile, case)
    base = _gains(cfg, case)
    da, de = default_gain_grid()
    alphas = _parse_range(cfg.extra["alphas"], log=True) if cfg.extra.get("alphas") else da
    etas = _parse_range(cfg.extra["etas"], log=True) if cfg.extra.get("etas") else de
    sweep_cfg = GainSweepSettings(horizon=cfg.extra.get("horizon", 5.0),
                                  seed=cfg.seed if cfg.seed is not None else 42)
    res = sweep_gains(case, profile, base, alphas, etas, sweep_cfg, workers=cfg.extra.get("workers"))
    counts = {r: int(np.sum(res.labels == r)) for r in ("a", "b", "c", "d")}
    report = {**res.meta, "counts": counts, "grid": [len(alphas), len(etas)]}
    artifacts = []
    if out is not None:
        with open(out / "regions.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "eta", "region", "zeta_min"])
            for a, alpha in enumerate(alphas):
                for e, eta in enumerate(etas):
                    w.writerow([_fmt(alpha), _fmt(eta), res.labels[a, e], _fmt(res.zeta_min[a, e])])
        _dump(report, out / "regions.json")
        artifacts = ["regions.csv", "regions.json"]
    return report, case, artifacts, 0


def cmd_setpoints(cfg: RunConfig, out: Path | None):
    case = resolve_case(cfg.case)
    if cfg.profile is not None:
        given = cases.load_profile(cfg.profile, case)
        p, v = given.p_star, given.v_star
    elif cfg.extra.get("p"):
        p = _parse_range(cfg.extra["p"])
        v = _parse_range(cfg.extra["v"]) if cfg.extra.get("v") else np.ones(case.n_inverters)
    else:
        prof = resolve_profile(None, case)
        p, v = prof.p_star, prof.v_star
    prof = solve_angles(case, p, v)
    report = cases.profile_to_dict(prof, case)
    report["consistency_residual"] = verify_consistency(case, prof).worst
    if out is not None:
        _dump(report, out / "profile.json")
    return report, case, ["profile.json"] if out else [], 0


HANDLERS = {"simulate": cmd_simulate, "certify": cmd_certify, "audit": cmd_audit, "linearize": cmd_linearize,
            "sweep-admittance": cmd_sweep_admittance, "sweep-gains": cmd_sweep_gains, "setpoints": cmd_setpoints}


# --- argument parsing ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, gains: bool = True):
    p.add_argument("--case", default="threebus", help="builtin name (threebus, ieee9) or JSON file")
    p.add_argument("--profile", help="set-point JSON file (defaults to the builtin profile)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    if gains:
        p.add_argument("--eta", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--kappa", type=float, help="controller rotation angle (default from the line ratio)")
        p.add_argument("--eta-per-second", dest="pu_time", action="store_false",
                       help="interpret eta in 1/s instead of on the per-unit time base")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridvoc", description="Simulate and certify oscillator-controlled inverter grids.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a scenario and write time series")
    _common(p)
    p.add_argument("--scenario", help="builtin name (paper-events) or JSON file")
    p.add_argument("--fixed-step", action="store_true", help="fixed-step RK4 (bit-reproducible)")
    p.add_argument("--dt", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)

    p = sub.add_parser("certify", help="evaluate the explicit stability certificates")
    _common(p)
    p.add_argument("--c", type=float, help="stability margin (default: half the largest feasible one)")
    p.add_argument("--variant", choices=("angle", "power", "both"), default="both")

    p = sub.add_parser("audit", help="Lyapunov decrease audit of a simulation output directory")
    p.add_argument("--run", required=True)
    p.add_argument("--kind", choices=("full", "reduced", "boundary"), default="full")
    p.add_argument("--out")

    p = sub.add_parser("linearize", help="equilibrium, eigenvalues and minimum damping ratio")
    _common(p)

    p = sub.add_parser("sweep-admittance", help="minimum damping ratio versus one line admittance")
    _common(p)
    p.add_argument("--line", required=True, help="FROM-TO bus ids, e.g. 1-2")
    p.add_argument("--values", required=True, help="admittances in S: start:stop:n or a,b,c")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("sweep-gains", help="region map over (alpha, eta)")
    _common(p)
    p.add_argument("--alphas", help="lo:hi:n (log spaced) or list")
    p.add_argument("--etas", help="lo:hi:n (log spaced) or list")
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("setpoints", help="set-point utilities")
    p.add_argument("action", choices=("solve",))
    _common(p, gains=False)
    p.add_argument("--p", help="comma-separated active powers")
    p.add_argument("--v", help="comma-separated voltage magnitudes")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command)
    for name in ("case", "profile", "scenario", "eta", "alpha", "kappa", "out", "seed"):
        if hasattr(ns, name):
            setattr(cfg, name, getattr(ns, name))
    cfg.pu_time = getattr(ns, "pu_time", True)
    env = os.environ.get("DVOC_SEED")
    if env is not None:
        try:
            cfg.seed = int(env)
        except ValueError as exc:
            raise ValidationError(f"DVOC_SEED must be an integer, got {env!r}") from exc
    if getattr(ns, "fixed_step", False):
        cfg.integrator["method"] = "RK4"
    for name in ("dt", "rtol", "atol"):
        if getattr(ns, name, None) is not None:
            val = getattr(ns, name)
            if not val > 0:
                raise ValidationError(f"--{name} must be positive")
            cfg.integrator[name] = val
    for name in ("c", "variant", "run", "kind", "line", "values", "workers", "alphas", "etas", "horizon", "p", "v"):
        if getattr(ns, name, None) is not None:
            cfg.extra[name] = getattr(ns, name)
    for name in ("eta", "alpha"):
        val = getattr(cfg, name)
        if val is not None and not val > 0:
            raise ValidationError(f"--{name} must be positive")
    return cfg


def run(cfg: RunConfig) -> int:
    started = time.time()
    out = _outdir(cfg)
    case = None
    try:
        report, case, artifacts, code = HANDLERS[cfg.command](cfg, out)
    except GridVocError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(_dump(err), file=sys.stderr)
        if out is not None:
            _dump(err, out / "error.json")
            write_manifest(out, cfg, case, started, ["error.json"], "error")
        return exc.exit_code
    print(_dump(report))
    if out is not None:
        status = "ok" if code == 0 else (report.get("status") or "diverged")
        write_manifest(out, cfg, case, started, artifacts, status)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except GridVocError as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
