"""The dispatchable virtual oscillator control law and its error forms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVoltage, ValidationError
from .netmodel import J, NetworkCase, kron2, rotation, weighted_laplacian
from .setpoints import SetpointProfile

# l/r approximation used when lines do not share a ratio
FALLBACK_OMEGA_RHO = 10.0
DEGENERATE_FLOOR = 1e-9


@dataclass(frozen=True)
class GainSettings:
    """Controller gains.

    ``eta`` and ``alpha`` are per-unit.  With ``pu_time`` the synchronization
    gain is expressed on the per-unit time base, so the rate entering the
    dynamics (time in seconds) is ``eta * omega0``.
    """
    eta: float
    alpha: float
    omega0: float
    kappa: float
    pu_time: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError("eta must be positive")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if not 0.0 <= self.kappa <= np.pi / 2:
            raise ValidationError("kappa must lie in [0, pi/2]")

    @property
    def rate(self) -> float:
        """Synchronization gain in 1/s."""
        return self.eta * self.omega0 if self.pu_time else self.eta

    def from_rate(self, rate: float) -> float:
        """Convert a gain in 1/s back to this setting's units."""
        return rate / self.omega0 if self.pu_time else rate

    def replace(self, **kw) -> "GainSettings":
        d = dict(eta=self.eta, alpha=self.alpha, omega0=self.omega0, kappa=self.kappa, pu_time=self.pu_time)
        d.update(kw)
        return GainSettings(**d)

    @classmethod
    def for_case(cls, case: NetworkCase, eta: float, alpha: float, kappa: float | None = None,
                 pu_time: bool = True) -> "GainSettings":
        if kappa is None:
            kappa = case_kappa(case)
        return cls(eta, alpha, case.omega0, kappa, pu_time)


def case_kappa(case: NetworkCase) -> float:
    if case.uniform_rho and case.n_passive == 0 and case.n_branches:
        return float(np.arctan(case.omega0 * case.rho))
    return float(np.arctan(FALLBACK_OMEGA_RHO))


def controller_gain(p_star: float, q_star: float, v_star: float, kappa: float) -> np.ndarray:
    return rotation(kappa) @ np.array([[p_star, q_star], [-q_star, p_star]]) / v_star ** 2


def controller_matrices(profile: SetpointProfile, kappa: float) -> np.ndarray:
    """Per-inverter 2x2 gains stacked as an (N, 2, 2) array."""
    return np.array([controller_gain(p, q, v, kappa)
                     for p, q, v in zip(profile.p_star, profile.q_star, profile.v_star)])


def stacked_gain(profile: SetpointProfile, kappa: float) -> np.ndarray:
    n = profile.n
    K = np.zeros((2 * n, 2 * n))
    for k, blk in enumerate(controller_matrices(profile, kappa)):
        K[2 * k:2 * k + 2, 2 * k:2 * k + 2] = blk
    return K


def phi(v_k, v_star_k: float) -> np.ndarray:
    v_k = np.asarray(v_k, dtype=float)
    return (v_star_k ** 2 - v_k @ v_k) / v_star_k ** 2 * v_k


def control_update(v_k, i_ok, K_k, v_star_k: float, gains: GainSettings) -> np.ndarray:
    """Static-frame voltage derivative commanded by the controller."""
    v_k = np.asarray(v_k, dtype=float)
    i_ok = np.asarray(i_ok, dtype=float)
    sync = K_k @ v_k - rotation(gains.kappa) @ i_ok + gains.alpha * phi(v_k, v_star_k)
    return gains.omega0 * J @ v_k + gains.rate * sync


def instantaneous_powers(v_k, i_ok) -> tuple[float, float]:
    v_k = np.asarray(v_k, dtype=float)
    i_ok = np.asarray(i_ok, dtype=float)
    return float(v_k @ i_ok), float(v_k @ J @ i_ok)


def power_errors(v_k, i_ok, p_star: float, q_star: float, v_star: float) -> tuple[float, float]:
    """Errors scaled so that v*^2 e_p = |v|^2 p* - v*^2 p (and likewise for q)."""
    p, q = instantaneous_powers(v_k, i_ok)
    m2 = float(np.dot(v_k, v_k))
    return (m2 * p_star - v_star ** 2 * p) / v_star ** 2, (m2 * q_star - v_star ** 2 * q) / v_star ** 2


def rotated_power_error(v_k, i_ok, p_star, q_star, v_star, kappa) -> np.ndarray:
    """Power errors mapped back onto the voltage plane; equals K v - R(kappa) i_o."""
    v_k = np.asarray(v_k, dtype=float)
    m2 = float(v_k @ v_k)
    if np.sqrt(m2) < DEGENERATE_FLOOR * v_star:
        raise DegenerateVoltage("voltage too small for the normalized error form")
    e_p, e_q = power_errors(v_k, i_ok, p_star, q_star, v_star)
    frame = np.column_stack([v_k, J @ v_k])
    return frame @ rotation(kappa) @ np.array([e_p, -e_q]) / m2


def phase_error(case: NetworkCase, profile: SetpointProfile, v) -> np.ndarray:
    """Weighted deviation of each inverter voltage from its synchronous neighbours."""
    vb = np.asarray(v, dtype=float).reshape(-1, 2)
    e = np.zeros_like(vb)
    vs = profile.v_star
    for w, br in zip(case.weights, case.branches):
        for j, k in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            rel = rotation(profile.relative_angle(j, k))
            e[k] += w * (vb[j] - vs[j] / vs[k] * rel @ vb[k])
    return e.ravel()


def sync_matrix(case: NetworkCase, profile: SetpointProfile, kappa: float) -> np.ndarray:
    """K - L for an inverter-only network."""
    L, _ = weighted_laplacian(case, check=False)
    return stacked_gain(profile, kappa) - kron2(L)
