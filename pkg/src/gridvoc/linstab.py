"""Equilibria, linearization, damping and parameter sweeps."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .certify import certified, condition2
from .dvoc import GainSettings
from .errors import EigensolveFailure, GridVocError, NoConvergence
from .netmodel import J, NetworkCase, line_admittance
from .setpoints import SetpointProfile, solve_angles
from .simcore import (ClosedLoop, InitialCondition, IntegratorSettings, Scenario, SystemState, run_scenario)

ZERO_MODE_REL = 1e-6
ORIGIN_TOL = 1e-9


def seed_state(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, lost=()) -> np.ndarray:
    return ClosedLoop(case, profile, gains, lost).steady_state(profile.target_voltages(0.0))


def find_equilibrium(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, lost=(),
                     x0: np.ndarray | None = None, tol: float = 1e-10, max_iter: int = 50,
                     gauge_bus: int = 0) -> SystemState:
    """Gauss-Newton on the rotating-frame rhs, with the phase of one inverter pinned."""
    system = ClosedLoop(case, profile, gains, lost)
    x = seed_state(case, profile, gains, lost) if x0 is None else np.array(x0, dtype=float)
    s = slice(2 * gauge_bus, 2 * gauge_bus + 2)
    gauge = np.zeros(x.size)
    gauge[s] = J @ x[s]
    nrm = np.linalg.norm(gauge)
    if nrm == 0:
        raise NoConvergence("gauge inverter has zero voltage in the seed")
    gauge /= nrm
    scale = max(1.0, np.linalg.norm(x))
    for _ in range(max_iter):
        f = system.rhs(0.0, x)
        res = np.linalg.norm(f)
        if res < tol * scale:
            return SystemState.unpack(system.layout, x)
        A = np.vstack([system.jacobian(x), gauge])
        b = np.concatenate([-f, [0.0]])
        dx = np.linalg.lstsq(A, b, rcond=None)[0]
        if not np.all(np.isfinite(dx)):
            raise NoConvergence("non-finite Newton step")
        x = x + dx
        if np.linalg.norm(x) > 1e3 * scale:
            raise NoConvergence("Newton iterate left the neighbourhood of the seed")
    raise NoConvergence(f"equilibrium residual stalled at {np.linalg.norm(system.rhs(0.0, x)):.3e}")


def jacobian(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, equilibrium, lost=()) -> np.ndarray:
    x = equilibrium.pack() if isinstance(equilibrium, SystemState) else np.asarray(equilibrium, dtype=float)
    return ClosedLoop(case, profile, gains, lost).jacobian(x)


def fd_jacobian(fun, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian (cross-check only)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((fun(x + e) - fun(x - e)) / (2 * step))
    return np.column_stack(cols)


@dataclass
class LinearizationResult:
    eigenvalues: np.ndarray
    zeta: np.ndarray
    zeta_min: float
    zero_mode_index: int
    regular: bool
    jacobian: np.ndarray | None = None
    equilibrium: SystemState | None = None

    @property
    def stable(self) -> bool:
        return bool(self.zeta_min > 0)

    @property
    def max_real(self) -> float:
        keep = np.ones(self.eigenvalues.size, dtype=bool)
        keep[self.zero_mode_index] = False
        return float(self.eigenvalues[keep].real.max())

    def to_dict(self) -> dict:
        return {"zeta_min": self.zeta_min, "zero_mode_index": int(self.zero_mode_index), "regular": self.regular,
                "eigenvalues_re": self.eigenvalues.real.tolist(), "eigenvalues_im": self.eigenvalues.imag.tolist()}


def damping_ratios(eigs: np.ndarray) -> np.ndarray:
    mag = np.abs(eigs)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(mag > 0, -eigs.real / mag, 0.0)


def damping_spectrum(jac: np.ndarray, exclude_zero_mode: bool = True) -> LinearizationResult:
    """Minimum damping ratio over all modes except the rotational zero mode."""
    jac = np.asarray(jac, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != jac.shape[1]:
        raise EigensolveFailure("Jacobian must be square")
    try:
        eigs = np.linalg.eigvals(jac)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(eigs)):
        raise EigensolveFailure("non-finite eigenvalues")
    zeta = damping_ratios(eigs)
    mags = np.abs(eigs)
    if exclude_zero_mode and eigs.size > 1:
        z = int(np.argmin(mags))
        regular = bool(mags[z] < ZERO_MODE_REL * mags.max())
        keep = np.ones(eigs.size, dtype=bool)
        keep[z] = False
        zmin = float(zeta[keep].min())
    else:
        z, regular, zmin = -1, True, float(zeta.min())
    return LinearizationResult(eigs, zeta, zmin, z, regular, jac)


def linearize(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, lost=()) -> LinearizationResult:
    eq = find_equilibrium(case, profile, gains, lost)
    res = damping_spectrum(jacobian(case, profile, gains, eq, lost))
    res.equilibrium = eq
    return res


@dataclass
class OriginReport:
    max_real: float
    eigenvalues: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(self.max_real > ORIGIN_TOL)


def origin_instability(case: NetworkCase, profile: SetpointProfile, gains: GainSettings) -> OriginReport:
    """Spectrum of the closed loop linearized at zero voltage and current."""
    system = ClosedLoop(case, profile, gains)
    eigs = np.linalg.eigvals(system.jacobian(np.zeros(system.layout.size)))
    return OriginReport(float(eigs.real.max()), eigs)


# --- sweeps ---------------------------------------------------------------------

@dataclass
class SweepResult:
    axes: dict
    zeta_min: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def crossing(self) -> float | None:
        """First sign change of zeta_min along a one-dimensional sweep (linear interpolation)."""
        x = np.asarray(self.axes["value"])
        z = self.zeta_min
        for a in range(len(z) - 1):
            if np.isfinite(z[a]) and np.isfinite(z[a + 1]) and z[a] > 0 >= z[a + 1]:
                return float(x[a] + (x[a + 1] - x[a]) * z[a] / (z[a] - z[a + 1]))
        return None


def line_admittance_si(case: NetworkCase, line: int) -> float:
    br = case.branches[line]
    return line_admittance(br.resistance, br.reactance) / case.z_base


def scale_line(case: NetworkCase, line: int, admittance_si: float) -> NetworkCase:
    """Set a line's admittance magnitude (in S) keeping its l/r ratio."""
    br = case.branches[line]
    k = line_admittance_si(case, line) / admittance_si
    return case.with_branch(line, replace(br, resistance=br.resistance * k, reactance=br.reactance * k))


def resolve_line(case: NetworkCase, line) -> int:
    if isinstance(line, (int, np.integer)):
        return int(line)
    a, b = line
    return case.branch_index(case.index_of(str(a)), case.index_of(str(b)))


def _zeta_point(args):
    case, profile, gains = args
    try:
        return linearize(case, profile, gains).zeta_min
    except GridVocError:
        return float("nan")


def sweep_admittance(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, line, values,
                     workers: int | None = None, max_jump: float = 0.5) -> SweepResult:
    """Minimum damping ratio as one line's admittance (in S) is varied at fixed injections."""
    idx = resolve_line(case, line)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise ValueError("admittance values must be positive")
    jobs, gaps, jumps = [], [], []
    theta = profile.theta_star
    for val in values:
        c = scale_line(case, idx, val)
        try:
            prof = solve_angles(c, profile.p_star, profile.v_star, theta0=theta)
        except NoConvergence:
            jobs.append(None)
            gaps.append(float(val))
            continue
        if theta is not None and np.max(np.abs(np.angle(np.exp(1j * (prof.theta_star - theta))))) > max_jump:
            jumps.append(float(val))
        theta = prof.theta_star
        jobs.append((c, prof, gains))
    live = [j for j in jobs if j is not None]
    if workers and workers > 1 and len(live) > 1:
        with ProcessPoolExecutor(workers) as pool:
            res = list(pool.map(_zeta_point, live))
    else:
        res = [_zeta_point(j) for j in live]
    it = iter(res)
    zeta = np.array([next(it) if j is not None else np.nan for j in jobs])
    br = case.branches[idx]
    meta = {"line": [case.buses[br.from_bus].id, case.buses[br.to_bus].id], "unit": "S",
            "nominal": line_admittance_si(case, idx), "gaps": gaps, "angle_jumps": jumps}
    return SweepResult({"value": values}, zeta, None, meta)


REGIONS = ("a", "b", "c", "d")
OVERSHOOT = 1.2


@dataclass(frozen=True)
class GainSweepSettings:
    horizon: float = 5.0
    skip: float = 5e-3
    cadence: float = 1e-3
    black_start: float = 1e-4
    seed: int = 42
    overshoot: float = OVERSHOOT


def _current_overshoot(case, profile, gains, eq: SystemState, cfg: GainSweepSettings) -> tuple[bool, float]:
    """Black start; True if some inverter's output current exceeds its steady value by the threshold."""
    sc = Scenario(cfg.horizon, cfg.cadence, InitialCondition("black_start", cfg.black_start, cfg.seed))
    ts = run_scenario(case, profile, gains, sc)
    if ts.diverged:
        return True, float("inf")
    system = ts.segments[0].system
    io = system.output_currents(ts.states).reshape(len(ts.times), -1, 2)
    io_eq = system.output_currents(eq.pack()).reshape(-1, 2)
    steady = np.linalg.norm(io_eq, axis=1)
    mag = np.linalg.norm(io, axis=2)[ts.times >= cfg.skip]
    ratio = float(np.max(mag.max(axis=0) / np.maximum(steady, 1e-12)))
    return ratio > cfg.overshoot, ratio


def classify_gains(case: NetworkCase, profile: SetpointProfile, gains: GainSettings,
                   cfg: GainSweepSettings = GainSweepSettings()) -> tuple[str, float]:
    """Region label and minimum damping ratio for one gain pair."""
    try:
        eq = find_equilibrium(case, profile, gains)
        lin = damping_spectrum(jacobian(case, profile, gains, eq))
    except GridVocError:
        return "b", float("nan")
    try:
        if certified(case, profile, gains):
            return "a", lin.zeta_min
    except GridVocError:
        pass
    if not lin.stable:
        return "b", lin.zeta_min
    try:
        over, _ = _current_overshoot(case, profile, gains, eq, cfg)
    except GridVocError:
        return "b", lin.zeta_min
    return ("c" if over else "d"), lin.zeta_min


def _gain_point(args):
    case, profile, gains, cfg = args
    return classify_gains(case, profile, gains, cfg)


def sweep_gains(case: NetworkCase, profile: SetpointProfile, base: GainSettings, alphas, etas,
                cfg: GainSweepSettings = GainSweepSettings(), workers: int | None = None) -> SweepResult:
    alphas, etas = np.asarray(alphas, dtype=float), np.asarray(etas, dtype=float)
    if np.any(alphas <= 0) or np.any(etas <= 0):
        raise ValueError("gain grid values must be positive")
    jobs = [(case, profile, base.replace(alpha=a, eta=e), cfg) for a in alphas for e in etas]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            res = list(pool.map(_gain_point, jobs))
    else:
        res = [_gain_point(j) for j in jobs]
    shape = (alphas.size, etas.size)
    labels = np.array([r[0] for r in res]).reshape(shape)
    zeta = np.array([r[1] for r in res]).reshape(shape)
    return SweepResult({"alpha": alphas, "eta": etas}, zeta, labels,
                       {"horizon": cfg.horizon, "overshoot": cfg.overshoot, "pu_time": base.pu_time})


def default_gain_grid(n: int = 40):
    return np.logspace(-1, 2, n), np.logspace(-4, -1, n)


# --- critical gain ----------------------------------------------------------------

@dataclass
class CriticalGain:
    eta_linear: float  # bisected stability limit of the linearization
    below_converges: bool
    above_converges: bool
    margin: float

    @property
    def confirmed(self) -> bool:
        return self.below_converges and not self.above_converges


def _zeta_at(case, profile, gains, eta):
    try:
        return linearize(case, profile, gains.replace(eta=eta)).zeta_min
    except GridVocError:
        return -np.inf


def critical_eta(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, lo: float, hi: float,
                 rtol: float = 1e-3) -> float:
    """Bisect (geometrically) the gain at which the minimum damping ratio changes sign."""
    zl, zh = _zeta_at(case, profile, gains, lo), _zeta_at(case, profile, gains, hi)
    if not (zl > 0 >= zh):
        raise NoConvergence(f"no stability change bracketed in [{lo:g}, {hi:g}] (zeta {zl:.3g}, {zh:.3g})")
    while hi / lo > 1 + rtol:
        mid = np.sqrt(lo * hi)
        if _zeta_at(case, profile, gains, mid) > 0:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def converges_from_black_start(case, profile, gains, duration: float = 10.0, tol: float = 1e-4,
                               seed: int = 42, settings: IntegratorSettings = IntegratorSettings()) -> tuple[bool, float]:
    """Simulate a black start and measure the final distance to the synchronous set (best global rotation)."""
    sc = Scenario(duration, duration / 100, InitialCondition("black_start", 1e-4, seed))
    ts = run_scenario(case, profile, gains, sc, settings)
    if ts.diverged:
        return False, float("inf")
    eq = find_equilibrium(case, profile, gains).pack()
    n = 2 * case.n_inverters
    v = ts.states[-1, :n].reshape(-1, 2)
    ve = eq[:n].reshape(-1, 2)
    # optimal common rotation aligning the equilibrium with the final voltages
    zc = np.sum((v[:, 0] + 1j * v[:, 1]) * np.conj(ve[:, 0] + 1j * ve[:, 1]))
    rot = np.exp(1j * np.angle(zc))
    ver = (ve[:, 0] + 1j * ve[:, 1]) * rot
    dist = float(np.max(np.abs(v[:, 0] + 1j * v[:, 1] - ver)))
    return dist < tol, dist


def simulated_critical_eta(case, profile, gains, lo, hi, margin: float = 0.1, duration: float = 10.0) -> CriticalGain:
    """Linear stability limit, confirmed by simulating just below and just above it."""
    eta_c = critical_eta(case, profile, gains, lo, hi)
    below = converges_from_black_start(case, profile, gains.replace(eta=eta_c * (1 - margin)), duration)[0]
    above = converges_from_black_start(case, profile, gains.replace(eta=eta_c * (1 + margin)), duration)[0]
    return CriticalGain(eta_c, below, above, margin)
