"""Power-flow-consistent set-points: branch powers, consistency checks, angle solver."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InconsistentProfile, NoConvergence, ValidationError
from .netmodel import NetworkCase

DEFAULT_TOL = 5e-3


@dataclass(frozen=True)
class SetpointProfile:
    """Per-inverter set-points.  Angles are relative to inverter 0 (theta[0] = 0)."""
    p_star: np.ndarray
    q_star: np.ndarray
    v_star: np.ndarray
    theta_star: np.ndarray | None = None

    def __post_init__(self):
        for name in ("p_star", "q_star", "v_star"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.v_star.size
        if self.p_star.size != n or self.q_star.size != n:
            raise ValidationError("set-point vectors differ in length")
        if np.any(~(self.v_star > 0)):
            raise ValidationError("voltage set-points must be positive")
        if self.theta_star is not None:
            th = np.asarray(self.theta_star, dtype=float)
            if th.size != n:
                raise ValidationError("angle vector length mismatch")
            object.__setattr__(self, "theta_star", th - th[0])

    @property
    def n(self) -> int:
        return self.v_star.size

    @property
    def s_star(self) -> np.ndarray:
        return np.hypot(self.p_star, self.q_star)

    @property
    def v_min(self) -> float:
        return float(self.v_star.min())

    @property
    def v_max(self) -> float:
        return float(self.v_star.max())

    def angles(self) -> np.ndarray:
        if self.theta_star is None:
            raise InconsistentProfile("profile carries no steady-state angles")
        return self.theta_star

    def theta_bar(self) -> float:
        """Largest relative angle over all inverter pairs."""
        th = self.angles()
        return float(np.max(np.abs(th[:, None] - th[None, :])))

    def relative_angle(self, j: int, k: int) -> float:
        th = self.angles()
        return float(th[j] - th[k])

    def target_voltages(self, phase: float = 0.0) -> np.ndarray:
        """Stacked rotating-frame voltages of the synchronous point with inverter 0 at ``phase``."""
        th = self.angles() + phase
        return np.column_stack([self.v_star * np.cos(th), self.v_star * np.sin(th)]).ravel()

    def with_bus(self, k: int, p=None, q=None, v=None) -> "SetpointProfile":
        p_star, q_star, v_star = self.p_star.copy(), self.q_star.copy(), self.v_star.copy()
        if p is not None:
            p_star[k] = p
        if q is not None:
            q_star[k] = q
        if v is not None:
            v_star[k] = v
        return replace(self, p_star=p_star, q_star=q_star, v_star=v_star)


def _branch_terms(case: NetworkCase, profile: SetpointProfile, j: int, k: int):
    idx = case.branch_index(j, k)
    br = case.branches[idx]
    vj, vk = profile.v_star[j], profile.v_star[k]
    th = profile.relative_angle(j, k)
    return br.resistance, br.reactance, vj, vk, th


def branch_powers(case: NetworkCase, profile: SetpointProfile, j: int, k: int) -> tuple[float, float]:
    """Active and reactive power leaving inverter k into the line towards j."""
    r, x, vj, vk, th = _branch_terms(case, profile, j, k)
    y2 = 1.0 / (r * r + x * x)
    p = y2 * (vk * vk * r - vk * vj * (r * np.cos(th) + x * np.sin(th)))
    q = y2 * (vk * vk * x - vk * vj * (x * np.cos(th) - r * np.sin(th)))
    return float(p), float(q)


def branch_powers_kappa(case: NetworkCase, profile: SetpointProfile, j: int, k: int) -> tuple[float, float]:
    """Same branch powers written through the line angle kappa = atan(x / r)."""
    r, x, vj, vk, th = _branch_terms(case, profile, j, k)
    y = 1.0 / np.hypot(r, x)
    kap = np.arctan2(x, r)
    ratio = vj / vk
    p = vk * vk * y * (np.cos(kap) - ratio * np.cos(th - kap))
    q = vk * vk * y * (np.sin(kap) + ratio * np.sin(th - kap))
    return float(p), float(q)


def bus_admittance(case: NetworkCase) -> np.ndarray:
    """Complex nodal admittance over all buses, shunts and loads included."""
    Y = np.zeros((case.n_buses, case.n_buses), dtype=complex)
    for br in case.branches:
        y = 1.0 / complex(br.resistance, br.reactance)
        a, b = br.from_bus, br.to_bus
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    for k, bus in enumerate(case.buses):
        if bus.kind == "passive":
            Y[k, k] += 1j * bus.shunt_b
            if bus.has_load:
                Y[k, k] += 1.0 / complex(bus.load_r, bus.load_x)
    return Y


def inverter_admittance(case: NetworkCase) -> np.ndarray:
    """Nodal admittance seen from the inverter terminals (passive buses eliminated)."""
    Y = bus_admittance(case)
    n = case.n_inverters
    if case.n_passive == 0:
        return Y
    Yii, Yip, Ypi, Ypp = Y[:n, :n], Y[:n, n:], Y[n:, :n], Y[n:, n:]
    return Yii - Yip @ np.linalg.solve(Ypp, Ypi)


def phasors(profile: SetpointProfile, theta: np.ndarray | None = None) -> np.ndarray:
    th = profile.angles() if theta is None else theta
    return profile.v_star * np.exp(1j * th)


def passive_phasors(case: NetworkCase, V_inv: np.ndarray) -> np.ndarray:
    """Steady passive-bus phasors given inverter phasors."""
    if case.n_passive == 0:
        return np.zeros(0, dtype=complex)
    Y = bus_admittance(case)
    n = case.n_inverters
    return -np.linalg.solve(Y[n:, n:], Y[n:, :n] @ V_inv)


def injections(case: NetworkCase, profile: SetpointProfile, theta: np.ndarray | None = None):
    """Network-implied (p, q) at every inverter for the profile's magnitudes and angles."""
    V = phasors(profile, theta)
    S = V * np.conj(inverter_admittance(case) @ V)
    return S.real, S.imag


@dataclass
class ConsistencyReport:
    residual_p: np.ndarray
    residual_q: np.ndarray
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(np.all(self.residual_p < self.tol) and np.all(self.residual_q < self.tol))

    @property
    def worst(self) -> float:
        return float(max(self.residual_p.max(), self.residual_q.max()))


def verify_consistency(case: NetworkCase, profile: SetpointProfile, tol: float = DEFAULT_TOL) -> ConsistencyReport:
    if profile.n != case.n_inverters:
        raise ValidationError("profile size does not match the number of inverters")
    if case.n_passive == 0:
        p = np.zeros(profile.n)
        q = np.zeros(profile.n)
        for br in case.branches:
            for j, k in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
                pj, qj = branch_powers(case, profile, j, k)
                p[k] += pj
                q[k] += qj
    else:
        p, q = injections(case, profile)
    return ConsistencyReport(np.abs(profile.p_star - p), np.abs(profile.q_star - q), tol)


def _power_jacobian(Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    """d(active injection)/d(angle)."""
    I = Y @ V
    dS = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
    return dS.real


def solve_angles(case: NetworkCase, p_star, v_star, q_star=None, theta0=None,
                 max_iter: int = 50, tol: float = 1e-11) -> SetpointProfile:
    """Newton on nodal active power with inverter 0 as angle reference and slack.

    Returns a completed profile: inverter 0 active power and all reactive powers
    are the values implied by the network at the solved angles.
    """
    n = case.n_inverters
    p_star = np.asarray(p_star, dtype=float)
    v_star = np.broadcast_to(np.asarray(v_star, dtype=float), (n,)).copy()
    if p_star.size != n:
        raise ValidationError("need one active-power set-point per inverter")
    Y = inverter_admittance(case)
    th = np.zeros(n) if theta0 is None else np.asarray(theta0, dtype=float) - theta0[0]
    for it in range(max_iter + 1):
        V = v_star * np.exp(1j * th)
        S = V * np.conj(Y @ V)
        mis = S.real[1:] - p_star[1:]
        if n == 1 or np.max(np.abs(mis)) < tol:
            break
        if it == max_iter:
            raise NoConvergence(f"angle solver stalled, mismatch {np.max(np.abs(mis)):.3e}")
        Jac = _power_jacobian(Y, V)[1:, 1:]
        try:
            step = np.linalg.solve(Jac, mis)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular power-flow Jacobian") from exc
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 1e3:
            raise NoConvergence("angle solver diverged")
        th[1:] -= step
    th = np.angle(np.exp(1j * th))
    V = v_star * np.exp(1j * th)
    S = V * np.conj(Y @ V)
    if np.any(np.abs(th[:, None] - th[None, :]) > np.pi / 2 + 1e-9) and n > 1:
        # a solution beyond the static stability limit is not an acceptable operating point
        raise NoConvergence("solved angles exceed pi/2 between inverters")
    return SetpointProfile(S.real, S.imag, v_star, th)


def complete_profile(case: NetworkCase, profile: SetpointProfile) -> SetpointProfile:
    """Solve angles for a profile's active powers and magnitudes."""
    return solve_angles(case, profile.p_star, profile.v_star, theta0=profile.theta_star)
