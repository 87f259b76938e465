"""Closed-loop assembly and time integration.

The rotating-frame closed loop is linear except for the magnitude term
``Phi(v) v``, so each configuration is held as a dense matrix ``A`` plus that
cubic term.  Events (load steps, inverter loss, set-point changes) swap in a
new configuration between integration segments.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .dvoc import GainSettings, control_update, stacked_gain
from .errors import (AssumptionViolated, DimensionMismatch, NonFiniteState, StepSizeUnderflow,
                     ValidationError)
from .netmodel import (J, NetworkCase, block_j, block_rotation, incidence, kron2, line_matrices,
                       weighted_laplacian)
from .setpoints import SetpointProfile

DIVERGENCE_NORM = 1e3
FREQ_FLOOR = 1e-6


@dataclass(frozen=True)
class StateLayout:
    n_inv: int
    n_lines: int
    n_passive: int
    n_loads: int

    @classmethod
    def of(cls, case: NetworkCase) -> "StateLayout":
        return cls(case.n_inverters, case.n_branches, case.n_passive, len(case.load_buses))

    @property
    def v(self) -> slice:
        return slice(0, 2 * self.n_inv)

    @property
    def i(self) -> slice:
        a = 2 * self.n_inv
        return slice(a, a + 2 * self.n_lines)

    @property
    def w(self) -> slice:
        a = 2 * (self.n_inv + self.n_lines)
        return slice(a, a + 2 * self.n_passive)

    @property
    def z(self) -> slice:
        a = 2 * (self.n_inv + self.n_lines + self.n_passive)
        return slice(a, a + 2 * self.n_loads)

    @property
    def size(self) -> int:
        return 2 * (self.n_inv + self.n_lines + self.n_passive + self.n_loads)


@dataclass
class SystemState:
    v: np.ndarray
    i: np.ndarray
    passive_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    passive_i: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: float = 0.0

    def pack(self) -> np.ndarray:
        return np.concatenate([self.v, self.i, self.passive_v, self.passive_i]).astype(float)

    @classmethod
    def unpack(cls, layout: StateLayout, x: np.ndarray, t: float = 0.0) -> "SystemState":
        x = np.asarray(x, dtype=float)
        if x.shape != (layout.size,):
            raise DimensionMismatch(f"state has {x.size} entries, case needs {layout.size}")
        return cls(x[layout.v].copy(), x[layout.i].copy(), x[layout.w].copy(), x[layout.z].copy(), t)


class ClosedLoop:
    """One configuration of the closed loop (fixed loads, gains and lost inverters)."""

    def __init__(self, case: NetworkCase, profile: SetpointProfile, gains: GainSettings,
                 lost: Sequence[int] = ()):
        if profile.n != case.n_inverters:
            raise DimensionMismatch("profile and case disagree on the number of inverters")
        self.case, self.profile, self.gains = case, profile, gains
        self.lost = tuple(sorted(set(int(k) for k in lost)))
        lay = self.layout = StateLayout.of(case)
        N, P = lay.n_inv, lay.n_passive
        n = lay.size
        _, BB = incidence(case)
        self.BBv, self.BBw = BB[:2 * N], BB[2 * N:]
        lm = self.lines = line_matrices(case)
        w0 = case.omega0
        eta = gains.rate

        A = np.zeros((n, n))
        v, i, w, z = lay.v, lay.i, lay.w, lay.z
        A[v, v] = eta * stacked_gain(profile, gains.kappa)
        A[v, i] = -eta * block_rotation(gains.kappa, N) @ self.BBv
        A[i, i] = -lm.Linv @ lm.Z
        A[i, v] = lm.Linv @ self.BBv.T
        if P:
            b = np.array([bus.shunt_b for bus in case.buses[N:]])
            Cinv = kron2(np.diag(w0 / b))
            E = np.zeros((P, lay.n_loads))
            for q, k in enumerate(case.load_buses):
                E[k - N, q] = 1.0
            E2 = kron2(E)
            A[i, w] = lm.Linv @ self.BBw.T
            A[w, w] = -w0 * block_j(P)
            A[w, i] = -Cinv @ self.BBw
            if lay.n_loads:
                rl = np.array([case.buses[k].load_r for k in case.load_buses])
                xl = np.array([case.buses[k].load_x for k in case.load_buses])
                A[w, z] = -Cinv @ E2
                A[z, z] = -kron2(np.diag(w0 * rl / xl)) - w0 * block_j(lay.n_loads)
                A[z, w] = kron2(np.diag(w0 / xl)) @ E2.T

        self.active = np.ones(N, dtype=bool)
        self.open_map = None
        if self.lost:
            A = self._open_terminals(A)
        self.A = A
        self.v_star2 = profile.v_star ** 2
        self.nl_gain = eta * gains.alpha * self.active

    def _open_terminals(self, A: np.ndarray) -> np.ndarray:
        lay, lm = self.layout, self.lines
        cols = np.concatenate([[2 * k, 2 * k + 1] for k in self.lost])
        self.lost_cols = cols
        BO = self.BBv[cols]
        G = BO @ lm.Linv @ BO.T
        if np.linalg.matrix_rank(G) < G.shape[0]:
            raise ValidationError("lost inverter has no incident line")
        self.G_open = G
        # terminal voltages that keep the net terminal current at zero
        Pmap = -np.linalg.solve(G, BO @ A[lay.i, :])
        Pmap[:, cols] = 0.0
        self.open_map = Pmap
        A = A.copy()
        A[lay.i, :] += A[lay.i][:, cols] @ Pmap
        A[:, cols] = 0.0
        A[cols, :] = 0.0
        self.active[list(self.lost)] = False
        return A

    def open_terminal_projection(self, x: np.ndarray) -> np.ndarray:
        """Interrupt the output current of lost inverters (energy-weighted projection)."""
        if not self.lost:
            return x
        lay, lm = self.layout, self.lines
        BO = self.BBv[self.lost_cols]
        x = x.copy()
        i = x[lay.i]
        x[lay.i] = i - lm.Linv @ BO.T @ np.linalg.solve(self.G_open, BO @ i)
        x[self.lost_cols] = self.open_map @ x
        return x

    def nonlinear(self, x: np.ndarray) -> np.ndarray:
        vb = x[:2 * self.layout.n_inv].reshape(-1, 2)
        scale = self.nl_gain * (1.0 - np.einsum("ij,ij->i", vb, vb) / self.v_star2)
        return (scale[:, None] * vb).ravel()

    def rhs(self, t: float, x: np.ndarray) -> np.ndarray:
        out = self.A @ x
        out[:2 * self.layout.n_inv] += self.nonlinear(x)
        return out

    def rhs_magnitude(self, x: np.ndarray) -> np.ndarray:
        """Entrywise sum of absolute contributions to rhs(x); bounds its floating-point cancellation."""
        out = np.abs(self.A) @ np.abs(x)
        vb = x[:2 * self.layout.n_inv].reshape(-1, 2)
        scale = np.abs(self.nl_gain) * (1.0 + np.einsum("ij,ij->i", vb, vb) / self.v_star2)
        out[:2 * self.layout.n_inv] += (scale[:, None] * np.abs(vb)).ravel()
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        Jm = self.A.copy()
        N = self.layout.n_inv
        vb = x[:2 * N].reshape(-1, 2)
        for k in range(N):
            if not self.active[k]:
                continue
            s = slice(2 * k, 2 * k + 2)
            phi = (self.v_star2[k] - vb[k] @ vb[k]) / self.v_star2[k]
            Jm[s, s] += self.nl_gain[k] * (phi * np.eye(2) - 2.0 / self.v_star2[k] * np.outer(vb[k], vb[k]))
        return Jm

    def terminal_voltages(self, X: np.ndarray) -> np.ndarray:
        """Inverter voltages (K, 2N); lost inverters report their open-circuit value."""
        X = np.atleast_2d(X)
        V = X[:, :2 * self.layout.n_inv].copy()
        if self.lost:
            V[:, self.lost_cols] = X @ self.open_map.T
        return V

    def terminal_derivatives(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        F = np.array([self.rhs(0.0, x) for x in X])
        dV = F[:, :2 * self.layout.n_inv]
        if self.lost:
            dV[:, self.lost_cols] = F @ self.open_map.T
        return dV

    def output_currents(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return X[:, self.layout.i] @ self.BBv.T

    def steady_state(self, v: np.ndarray) -> np.ndarray:
        """Full state with network states at their steady values for the given inverter voltages."""
        lay = self.layout
        x = np.zeros(lay.size)
        x[lay.v] = v
        rest = np.arange(2 * lay.n_inv, lay.size)
        if rest.size:
            x[rest] = np.linalg.solve(self.A[np.ix_(rest, rest)], -self.A[rest][:, lay.v] @ v)
        return x

    def rhs_static(self, t: float, x: np.ndarray) -> np.ndarray:
        """Stationary-frame closed loop, written from the per-inverter control law."""
        case, lay, lm = self.case, self.layout, self.lines
        N, P = lay.n_inv, lay.n_passive
        w0 = case.omega0
        v, i = x[lay.v], x[lay.i]
        wv, zc = x[lay.w], x[lay.z]
        io = self.BBv @ i
        K = stacked_gain(self.profile, self.gains.kappa)
        dv = np.zeros(2 * N)
        for k in range(N):
            s = slice(2 * k, 2 * k + 2)
            dv[s] = control_update(v[s], io[s], K[s, s], self.profile.v_star[k], self.gains)
        drop = self.BBv.T @ v + (self.BBw.T @ wv if P else 0.0)
        di = lm.Linv @ (-lm.R @ i + drop)
        parts = [dv, di]
        if P:
            b = np.array([bus.shunt_b for bus in case.buses[N:]])
            load_inj = np.zeros(2 * P)
            dz = np.zeros(2 * lay.n_loads)
            for q, k in enumerate(case.load_buses):
                bus = case.buses[k]
                s = slice(2 * (k - N), 2 * (k - N) + 2)
                zq = zc[2 * q:2 * q + 2]
                load_inj[s] += zq
                dz[2 * q:2 * q + 2] = w0 / bus.load_x * (-bus.load_r * zq + wv[s])
            dw = np.repeat(w0 / b, 2) * (-(self.BBw @ i) - load_inj)
            parts += [dw, dz]
        return np.concatenate(parts)


def rotate_state(x: np.ndarray, angle: float) -> np.ndarray:
    """Rotate every alpha-beta pair of a stacked state by a common angle."""
    xb = np.asarray(x, dtype=float).reshape(-1, 2)
    c, s = np.cos(angle), np.sin(angle)
    return np.column_stack([c * xb[:, 0] - s * xb[:, 1], s * xb[:, 0] + c * xb[:, 1]]).ravel()


def _state_vector(case: NetworkCase, state) -> np.ndarray:
    layout = StateLayout.of(case)
    x = state.pack() if isinstance(state, SystemState) else np.asarray(state, dtype=float)
    if x.shape != (layout.size,):
        raise DimensionMismatch(f"state has {x.size} entries, case needs {layout.size}")
    return x


def rhs_full(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, state) -> np.ndarray:
    x = _state_vector(case, state)
    return ClosedLoop(case, profile, gains).rhs(0.0, x)


def _require_reduced(case: NetworkCase):
    if case.n_passive:
        raise AssumptionViolated("reduced model needs an inverter-only network")
    if not case.uniform_rho:
        raise AssumptionViolated("reduced model needs a common l/r ratio on all lines")


def rhs_reduced(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, v) -> np.ndarray:
    """Voltage dynamics with line currents at their quasi-steady-state values."""
    _require_reduced(case)
    v = np.asarray(v, dtype=float)
    if v.shape != (2 * case.n_inverters,):
        raise DimensionMismatch("voltage vector has the wrong size")
    L, _ = weighted_laplacian(case, check=False)
    KL = stacked_gain(profile, gains.kappa) - kron2(L)
    vb = v.reshape(-1, 2)
    phi = (1.0 - np.einsum("ij,ij->i", vb, vb) / profile.v_star ** 2)[:, None] * vb
    return gains.rate * (KL @ v + gains.alpha * phi.ravel())


def rhs_boundary(case: NetworkCase, y) -> np.ndarray:
    lm = line_matrices(case)
    return -lm.Linv @ lm.Z @ np.asarray(y, dtype=float)


# --- scenarios ---------------------------------------------------------------

EVENT_KINDS = ("load_step", "inverter_loss", "setpoint_change")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    bus: str
    scale: float | None = None  # load admittance multiplier
    p_scale: float | None = None  # active load multiplier, reactive unchanged
    p_star: float | None = None
    q_star: float | None = None
    v_star: float | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind {self.kind!r}")
        if self.kind == "load_step":
            if (self.scale is None) == (self.p_scale is None):
                raise ValidationError("load step needs exactly one of scale or p_scale")
            if not (self.scale or self.p_scale) > 0:
                raise ValidationError("load step scale must be positive")


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "black_start"  # black_start | target | state
    magnitude: float = 1e-4
    seed: int = 42
    state: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("black_start", "target", "state"):
            raise ValidationError(f"unknown initial condition {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    duration: float
    cadence: float = 1e-3
    initial: InitialCondition = InitialCondition()
    events: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not (self.duration > 0 and self.cadence > 0):
            raise ValidationError("duration and cadence must be positive")
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("event times must be strictly increasing")
        if any(not 0 < t <= self.duration for t in times):
            raise ValidationError("event times must lie within the run")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.cadence)) + 1

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.n_samples)


@dataclass(frozen=True)
class IntegratorSettings:
    method: str = "RK45"  # or RK4 (fixed step)
    rtol: float = 1e-7
    atol: float = 1e-9
    dt: float = 1e-5
    divergence_norm: float = DIVERGENCE_NORM

    def __post_init__(self):
        if self.method not in ("RK45", "RK4"):
            raise ValidationError(f"unknown integrator {self.method!r}")


@dataclass
class Segment:
    t0: float
    t1: float
    system: ClosedLoop


@dataclass
class TimeSeries:
    times: np.ndarray
    states: np.ndarray
    layout: StateLayout
    segments: list
    diverged: bool = False
    reason: str = ""
    scenario: Scenario | None = None

    def system_at(self, t: float) -> ClosedLoop:
        for seg in self.segments:
            if t <= seg.t1 + 1e-12:
                return seg.system
        return self.segments[-1].system

    def segment_indices(self):
        """(system, sample index array) for each segment; a sample at an event time belongs before it."""
        out = []
        start = 0
        for seg in self.segments:
            stop = int(np.searchsorted(self.times, seg.t1 + 1e-12, side="right"))
            if stop > start:
                out.append((seg.system, np.arange(start, stop)))
            start = stop
        return out


def _integrate_rk4(fun, x0, t0, t_eval, dt, limit):
    xs = []
    x = np.array(x0, dtype=float)
    t = t0
    for te in t_eval:
        n = max(1, int(np.ceil((te - t) / dt - 1e-9)))
        h = (te - t) / n
        for _ in range(n):
            k1 = fun(t, x)
            k2 = fun(t + h / 2, x + h / 2 * k1)
            k3 = fun(t + h / 2, x + h / 2 * k2)
            k4 = fun(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"non-finite state at t={t:.6g}")
        xs.append(x.copy())
        if np.linalg.norm(x) > limit:
            return np.array(xs), "diverged", f"state norm above {limit:g} at t={t:.6g}"
        t = te
    return np.array(xs), "ok", ""


def integrate(rhs: Callable, state0, t_span, t_eval=None, settings: IntegratorSettings = IntegratorSettings()):
    """Integrate ``rhs`` and return (times, states, status, message).

    Status is ``ok`` or ``diverged`` (state norm above the limit); integrator
    breakdown raises StepSizeUnderflow, non-finite values raise NonFiniteState.
    """
    x0 = np.asarray(state0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise NonFiniteState("initial state is not finite")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t_eval is None:
        t_eval = np.array([t1])
    t_eval = np.asarray(t_eval, dtype=float)
    limit = settings.divergence_norm
    if settings.method == "RK4":
        X, status, msg = _integrate_rk4(rhs, x0, t0, t_eval, settings.dt, limit)
        return t_eval[:len(X)], X, status, msg

    def blowup(t, x):
        return np.linalg.norm(x) - limit
    blowup.terminal = True

    if t1 <= t0:
        return t_eval[:0], np.zeros((0, x0.size)), "ok", ""
    sol = solve_ivp(rhs, (t0, t1), x0, method="RK45", t_eval=t_eval, rtol=settings.rtol,
                    atol=settings.atol, events=blowup)
    X = sol.y.T if sol.y.size else np.zeros((0, x0.size))
    if not np.all(np.isfinite(X)):
        raise NonFiniteState("integration produced non-finite values")
    if sol.status == -1:
        raise StepSizeUnderflow(sol.message)
    if sol.status == 1:
        return sol.t, X, "diverged", f"state norm above {limit:g} at t={sol.t_events[0][0]:.6g}"
    return sol.t, X, "ok", ""


def black_start_state(case: NetworkCase, magnitude: float = 1e-4, seed: int = 42) -> np.ndarray:
    layout = StateLayout.of(case)
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0.0, 2 * np.pi, case.n_inverters)
    x = np.zeros(layout.size)
    x[layout.v] = magnitude * np.column_stack([np.cos(ang), np.sin(ang)]).ravel()
    return x


def target_state(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, phase: float = 0.0) -> np.ndarray:
    """Synchronous operating point: set-point voltages and steady network states."""
    return ClosedLoop(case, profile, gains).steady_state(profile.target_voltages(phase))


def initial_state(case, profile, gains, initial: InitialCondition) -> np.ndarray:
    if initial.kind == "black_start":
        return black_start_state(case, initial.magnitude, initial.seed)
    if initial.kind == "target":
        return target_state(case, profile, gains)
    return _state_vector(case, np.asarray(initial.state, dtype=float))


def apply_event(case: NetworkCase, profile: SetpointProfile, lost: set, event: Event):
    k = case.index_of(event.bus)
    if event.kind == "load_step":
        bus = case.buses[k]
        if not bus.has_load:
            raise ValidationError(f"bus {event.bus} has no load")
        y = 1.0 / complex(bus.load_r, bus.load_x)
        if event.scale is not None:
            y = y * event.scale
        else:
            y = complex(y.real * event.p_scale, y.imag)
        z = 1.0 / y
        if not (z.real > 0 and z.imag > 0):
            raise ValidationError("load step leaves the load outside the series RL range")
        case = case.with_bus(k, replace(bus, load_r=z.real, load_x=z.imag))
    elif event.kind == "inverter_loss":
        if k >= case.n_inverters:
            raise ValidationError(f"bus {event.bus} is not an inverter")
        lost = lost | {k}
    else:
        if k >= case.n_inverters:
            raise ValidationError(f"bus {event.bus} is not an inverter")
        profile = profile.with_bus(k, p=event.p_star, q=event.q_star, v=event.v_star)
    return case, profile, lost


def run_scenario(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, scenario: Scenario,
                 settings: IntegratorSettings = IntegratorSettings()) -> TimeSeries:
    """Integrate piecewise between events.  Divergence is reported, not raised."""
    times = scenario.sample_times()
    x = initial_state(case, profile, gains, scenario.initial)
    lost: set = set()
    system = ClosedLoop(case, profile, gains)
    layout = system.layout
    bounds = [0.0] + [e.time for e in scenario.events] + [scenario.duration]
    segments, chunks = [], [x[None, :]]
    diverged, reason = False, ""
    for s in range(len(bounds) - 1):
        t0, t1 = bounds[s], bounds[s + 1]
        if s > 0:
            case, profile, lost = apply_event(case, profile, lost, scenario.events[s - 1])
            system = ClosedLoop(case, profile, gains, lost)
            x = system.open_terminal_projection(x)
        segments.append(Segment(t0, t1, system))
        mask = (times > t0 + 1e-12) & (times <= t1 + 1e-12)
        if t1 <= t0:
            continue
        try:
            ts, X, status, msg = integrate(system.rhs, x, (t0, t1), times[mask], settings)
        except (StepSizeUnderflow, NonFiniteState) as exc:
            diverged, reason = True, f"{type(exc).__name__}: {exc}"
            break
        if len(X):
            chunks.append(X)
            x = X[-1]
        if status != "ok":
            diverged, reason = True, msg
            break
        if mask.any() and not np.isclose(ts[-1], t1):
            # t1 not on the output grid: advance the state to the event time
            _, Xe, status, msg = integrate(system.rhs, x, (ts[-1], t1), [t1], settings)
            x = Xe[-1]
        elif not mask.any():
            _, Xe, status, msg = integrate(system.rhs, x, (t0, t1), [t1], settings)
            x = Xe[-1]
    states = np.vstack(chunks)
    return TimeSeries(times[:len(states)], states, layout, segments, diverged, reason, scenario)


@dataclass
class Channels:
    times: np.ndarray
    v: np.ndarray  # (K, N, 2)
    vmag: np.ndarray  # (K, N)
    freq_hz: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iomag: np.ndarray


def derived_channels(case: NetworkCase, ts: TimeSeries) -> Channels:
    """Per-inverter magnitude, frequency and instantaneous powers at every sample."""
    K, N = len(ts.times), ts.layout.n_inv
    V = np.zeros((K, 2 * N))
    dV = np.zeros((K, 2 * N))
    IO = np.zeros((K, 2 * N))
    for system, idx in ts.segment_indices():
        X = ts.states[idx]
        V[idx] = system.terminal_voltages(X)
        dV[idx] = system.terminal_derivatives(X)
        IO[idx] = system.output_currents(X)
        if system.lost:
            IO[np.ix_(idx, system.lost_cols)] = 0.0
    Vb, dVb, Ib = V.reshape(K, N, 2), dV.reshape(K, N, 2), IO.reshape(K, N, 2)
    vmag = np.linalg.norm(Vb, axis=2)
    p = np.einsum("knc,knc->kn", Vb, Ib)
    JI = np.stack([-Ib[..., 1], Ib[..., 0]], axis=-1)
    q = np.einsum("knc,knc->kn", Vb, JI)
    cross = Vb[..., 0] * dVb[..., 1] - Vb[..., 1] * dVb[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        freq = case.omega0 / (2 * np.pi) + cross / (2 * np.pi * vmag ** 2)
    freq[vmag < FREQ_FLOOR] = np.nan
    return Channels(ts.times, Vb, vmag, freq, p, q, np.linalg.norm(Ib, axis=2))


@dataclass
class SettlingReport:
    settled: bool
    segments: list  # per segment: dict with spreads measured over its trailing window

    @property
    def reason(self) -> str:
        bad = [s for s in self.segments if not s["settled"]]
        if not bad:
            return ""
        s = bad[0]
        return (f"not synchronized before t={s['t1']:.6g}: frequency spread {s['freq_spread_hz']:.3g} Hz, "
                f"frequency swing {s['freq_swing_hz']:.3g} Hz, magnitude swing {s['vmag_swing']:.3g}")


def settling_check(case: NetworkCase, ts: TimeSeries, window: float = 0.5, freq_tol: float = 0.05,
                   vmag_tol: float = 0.01, channels: Channels | None = None) -> SettlingReport:
    """Check that every segment ends in a synchronous steady state.

    Over the last ``window`` seconds of each segment the active inverters must
    share one frequency, and frequencies and voltage magnitudes must be flat.
    Large bounded oscillations never trip the state-norm limit; this does.
    """
    ch = channels or derived_channels(case, ts)
    out = []
    for system, idx in ts.segment_indices():
        t1 = ts.times[idx[-1]]
        sel = idx[ts.times[idx] >= t1 - window]
        act = np.flatnonzero(system.active)
        f = ch.freq_hz[np.ix_(sel, act)]
        m = ch.vmag[np.ix_(sel, act)]
        if not np.all(np.isfinite(f)):
            spread = swing = float("inf")
        else:
            spread = float(np.max(f.max(axis=1) - f.min(axis=1)))
            swing = float(np.max(f.max(axis=0) - f.min(axis=0)))
        mswing = float(np.max(m.max(axis=0) - m.min(axis=0)))
        ok = spread < freq_tol and swing < freq_tol and mswing < vmag_tol
        out.append({"t1": float(t1), "freq_spread_hz": spread, "freq_swing_hz": swing, "vmag_swing": mswing,
                    "settled": bool(ok)})
    return SettlingReport(all(s["settled"] for s in out) and not ts.diverged, out)
