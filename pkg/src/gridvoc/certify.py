"""Explicit stability certificates and the Lyapunov functions behind them.

All rates are in 1/s (the gain's ``rate``) and line time constants in seconds;
the reported ``eta_bound`` is converted back to the units of the gain settings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dvoc import GainSettings, phi as phi_k, stacked_gain
from .errors import AssumptionViolated, DegenerateNetwork, InconsistentProfile
from .netmodel import (NetworkCase, algebraic_connectivity, block_rotation, incidence, kron2, line_matrices,
                       max_weighted_degree, nullspace_basis, rotation, weighted_laplacian)
from .setpoints import SetpointProfile, branch_powers, verify_consistency

CONSISTENCY_TOL = 5e-3


def spectral_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(A, 2)) if A.size else 0.0


def _require(case: NetworkCase, profile: SetpointProfile, tol: float = CONSISTENCY_TOL):
    if case.n_passive:
        raise AssumptionViolated("certificates need an inverter-only network")
    if not case.uniform_rho:
        raise AssumptionViolated("certificates need a common l/r ratio on all lines")
    report = verify_consistency(case, profile, tol)
    if not report.passed:
        raise InconsistentProfile(f"set-points violate the power flow equations (worst residual {report.worst:.3e})")


@dataclass
class StabilityCertificate:
    variant: str
    lhs_per_bus: np.ndarray
    rhs: float  # right-hand side of the first inequality at the chosen c
    c: float
    c_max: float
    eta_bound: float  # same units as GainSettings.eta
    eta_bound_rate: float  # 1/s
    norms: dict
    passed: dict = field(default_factory=dict)

    @property
    def rhs_margin(self) -> float:
        return float(self.rhs - self.lhs_per_bus.max())

    @property
    def ok(self) -> bool:
        return bool(self.passed.get("overall", False))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "lhs_per_bus": self.lhs_per_bus.tolist(), "rhs": self.rhs,
                "rhs_margin": self.rhs_margin, "c": self.c, "c_max": self.c_max, "eta_bound": self.eta_bound,
                "eta_bound_per_second": self.eta_bound_rate, "norms": self.norms, "pass": self.passed}


def _norms(case, profile, gains):
    L, _ = weighted_laplacian(case, check=False)
    _, BB = incidence(case)
    lm = line_matrices(case)
    Y = BB @ lm.Zinv @ BB.T
    KL = stacked_gain(profile, gains.kappa) - kron2(L)
    return {"K_minus_L": spectral_norm(KL), "Y": spectral_norm(Y), "lambda2": algebraic_connectivity(L),
            "d_max": max_weighted_degree(case), "rho": case.rho,
            "K": spectral_norm(stacked_gain(profile, gains.kappa))}


def angle_form_lhs(case: NetworkCase, profile: SetpointProfile, alpha: float) -> np.ndarray:
    lhs = np.full(profile.n, float(alpha))
    vs = profile.v_star
    for w, br in zip(case.weights, case.branches):
        for j, k in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            lhs[k] += w * abs(1.0 - vs[j] / vs[k] * np.cos(profile.relative_angle(j, k)))
    return lhs


def _eta_angle_form(c, norms):
    return c / (norms["rho"] * norms["Y"] * (c + 5 * norms["K_minus_L"]))


def condition2(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, c: float | None = None,
               tol: float = CONSISTENCY_TOL) -> StabilityCertificate:
    """Angle-form certificate.  Without ``c`` the margin defaults to half of the largest feasible one."""
    _require(case, profile, tol)
    norms = _norms(case, profile, gains)
    lhs = angle_form_lhs(case, profile, gains.alpha)
    tbar = profile.theta_bar()
    norms["theta_bar"] = tbar
    scale = 0.5 * (1 + np.cos(tbar)) * profile.v_min ** 2 / profile.v_max ** 2 if tbar <= np.pi / 2 else 0.0
    rhs0 = scale * norms["lambda2"]
    c_max = float(rhs0 - lhs.max())
    if c is None:
        c = 0.5 * c_max if c_max > 0 else float("nan")
    feasible = bool(c > 0 and c_max > 0) if np.isfinite(c) else False
    rate = _eta_angle_form(c, norms) if feasible else 0.0
    first = bool(feasible and lhs.max() < rhs0 - c)
    second = bool(feasible and gains.rate < rate)
    return StabilityCertificate("angle", lhs, float(rhs0 - c) if np.isfinite(c) else float("nan"), float(c),
                                c_max, gains.from_rate(rate), rate, norms,
                                {"first": first, "eta": second, "overall": first and second})


def certified(case: NetworkCase, profile: SetpointProfile, gains: GainSettings) -> bool:
    """True if some margin c satisfies both inequalities of the angle-form certificate."""
    cert = condition2(case, profile, gains)
    if cert.c_max <= 0:
        return False
    # the gain bound increases with c, so the supremum sits at c_max
    return bool(gains.rate < _eta_angle_form(cert.c_max, cert.norms))


def powerform_lhs(case: NetworkCase, profile: SetpointProfile, gains: GainSettings) -> np.ndarray:
    lhs = np.full(profile.n, float(gains.alpha))
    ck, sk = np.cos(gains.kappa), np.sin(gains.kappa)
    for br in case.branches:
        for j, k in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            p, q = branch_powers(case, profile, j, k)
            lhs[k] += (ck * abs(p) + sk * abs(q)) / profile.v_star[k] ** 2
    return lhs


def prop2_powerform(case: NetworkCase, profile: SetpointProfile, gains: GainSettings, c: float | None = None,
                    tol: float = CONSISTENCY_TOL) -> StabilityCertificate:
    _require(case, profile, tol)
    norms = _norms(case, profile, gains)
    tbar = profile.theta_bar()
    norms["theta_bar"] = tbar
    lhs = powerform_lhs(case, profile, gains)
    rhs0 = profile.v_min ** 2 / (2 * profile.v_max ** 2) * norms["lambda2"]
    c_max = float(rhs0 - lhs.max())
    if c is None:
        c = 0.5 * c_max if c_max > 0 else float("nan")
    feasible = bool(np.isfinite(c) and c > 0 and c_max > 0 and tbar <= np.pi / 2)
    smax = float(np.max(profile.s_star / profile.v_star ** 2))
    dmax = norms["d_max"]
    rate = c / (2 * norms["rho"] * dmax * (c + 5 * smax + 10 * dmax)) if feasible else 0.0
    first = bool(feasible and lhs.max() <= rhs0 - c)
    second = bool(feasible and gains.rate < rate)
    return StabilityCertificate("power", lhs, float(rhs0 - c) if np.isfinite(c) else float("nan"), float(c),
                                c_max, gains.from_rate(rate), rate, norms,
                                {"first": first, "eta": second, "overall": first and second})


# --- Lyapunov machinery -------------------------------------------------------

@dataclass(frozen=True)
class LyapunovConstants:
    alpha1: float
    beta1: float
    beta2: float
    gamma: float
    d: float
    c: float
    eta: float  # rate, 1/s
    norm_KL: float
    norm_Y: float
    rho: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("alpha1", "beta1", "beta2", "gamma", "d", "c")}

    def composite_matrix(self) -> np.ndarray:
        """Quadratic form bounding the decrease of the composite function."""
        d = self.d
        off = -((1 - d) * self.beta1 + d * self.beta2) / 2
        return np.array([[(1 - d) * self.alpha1, off, 0.0],
                         [off, (1 - self.gamma) * d, 0.0],
                         [0.0, 0.0, d]])


def lyapunov_constants(case: NetworkCase, profile: SetpointProfile, gains: GainSettings,
                       c: float | None = None) -> LyapunovConstants:
    if c is None:
        c = condition2(case, profile, gains).c
    norms = _norms(case, profile, gains)
    nkl = norms["K_minus_L"]
    if nkl < 1e-12:
        raise DegenerateNetwork("K - L vanishes")
    eta = gains.rate
    beta1 = 1.0 / nkl
    beta2 = norms["rho"] * norms["Y"]
    return LyapunovConstants(c / (5 * eta * nkl ** 2), beta1, beta2, eta * beta2, beta1 / (beta1 + beta2),
                             float(c), eta, nkl, norms["Y"], norms["rho"])


def sync_basis(profile: SetpointProfile) -> np.ndarray:
    """Columns span the synchronous set: inverter k at v*_k R(theta_k1)."""
    return np.vstack([v * rotation(t) for v, t in zip(profile.v_star, profile.angles())])


def sync_projector(profile: SetpointProfile) -> np.ndarray:
    S = sync_basis(profile)
    return np.eye(S.shape[0]) - S @ S.T / np.sum(profile.v_star ** 2)


def phi_stack(profile: SetpointProfile, v) -> np.ndarray:
    vb = np.asarray(v, dtype=float).reshape(-1, 2)
    return np.concatenate([phi_k(vb[k], profile.v_star[k]) for k in range(profile.n)])


def lyap_V(case, profile, gains, v, alpha1: float) -> float:
    v = np.asarray(v, dtype=float)
    P = sync_projector(profile)
    m2 = np.sum(v.reshape(-1, 2) ** 2, axis=1)
    mag = np.sum(((profile.v_star ** 2 - m2) / profile.v_star) ** 2)
    return float(0.5 * v @ P @ v + 0.5 * gains.rate * gains.alpha * alpha1 * mag)


def grad_V(profile, gains, v, alpha1: float) -> np.ndarray:
    P = sync_projector(profile)
    return P @ v - 2 * gains.rate * gains.alpha * alpha1 * phi_stack(profile, v)


def lyap_psi(case, profile, gains, v, norm_KL: float | None = None) -> float:
    v = np.asarray(v, dtype=float)
    if norm_KL is None:
        norm_KL = _norms(case, profile, gains)["K_minus_L"]
    P = sync_projector(profile)
    dist = np.linalg.norm(P @ v)  # P is an orthogonal projector
    return float(gains.rate * (norm_KL * dist + gains.alpha * np.linalg.norm(phi_stack(profile, v))))


def _w_matrices(case: NetworkCase):
    B, BB = incidence(case)
    _, BBn = nullspace_basis(B)
    lm = line_matrices(case)
    return BB, BBn.T @ lm.L, lm


def lyap_W(case: NetworkCase, y) -> float:
    y = np.asarray(y, dtype=float)
    BB, Nl, _ = _w_matrices(case)
    yo, yn = BB @ y, Nl @ y
    return float(case.rho / 2 * (yo @ yo + yn @ yn))


def grad_W(case: NetworkCase, y) -> np.ndarray:
    BB, Nl, _ = _w_matrices(case)
    return case.rho * (BB.T @ (BB @ y) + Nl.T @ (Nl @ y))


@dataclass
class LyapunovBreakdown:
    V: float
    W: float
    nu: float
    psi: float
    y_o_norm: float
    y_n_norm: float
    constants: LyapunovConstants


def _split(case, state):
    x = np.asarray(state.pack() if hasattr(state, "pack") else state, dtype=float)
    n = 2 * case.n_inverters
    return x[:n], x[n:]


def current_error(case: NetworkCase, v, i) -> np.ndarray:
    _, BB = incidence(case)
    lm = line_matrices(case)
    return i - lm.Zinv @ BB.T @ v


def lyap_nu(case, profile, gains, state, constants: LyapunovConstants) -> LyapunovBreakdown:
    v, i = _split(case, state)
    y = current_error(case, v, i)
    BB, Nl, _ = _w_matrices(case)
    V = lyap_V(case, profile, gains, v, constants.alpha1)
    W = lyap_W(case, y)
    d = constants.d
    return LyapunovBreakdown(V, W, d * W + (1 - d) * V, lyap_psi(case, profile, gains, v, constants.norm_KL),
                             float(np.linalg.norm(BB @ y)), float(np.linalg.norm(Nl @ y)), constants)


# --- decrease audits ------------------------------------------------------------

@dataclass
class AuditReport:
    kind: str
    samples: int
    min_slack: float
    max_slack: float
    violations: int
    rel_tol: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "samples": self.samples, "min_slack": self.min_slack,
                "max_slack": self.max_slack, "violations": self.violations, "rel_tol": self.rel_tol,
                "passed": self.passed, **self.extra}


def _report(kind, slack, scale, rel_tol, extra=None):
    slack, scale = np.asarray(slack), np.asarray(scale)
    bad = int(np.sum(slack > rel_tol * np.maximum(scale, 1e-300)))
    return AuditReport(kind, len(slack), float(slack.min()), float(slack.max()), bad, rel_tol, extra or {})


def audit_reduced(case, profile, gains, V_samples, constants: LyapunovConstants, rel_tol=1e-8) -> AuditReport:
    """Check dV/dt <= -alpha1 psi^2 along reduced-order samples (rows of V_samples)."""
    from .simcore import rhs_reduced
    slack, scale = [], []
    for v in np.atleast_2d(V_samples):
        f = rhs_reduced(case, profile, gains, v)
        dV = grad_V(profile, gains, v, constants.alpha1) @ f
        bound = constants.alpha1 * lyap_psi(case, profile, gains, v, constants.norm_KL) ** 2
        slack.append(dV + bound)
        scale.append(abs(dV) + bound)
    return _report("reduced", slack, scale, rel_tol)


def audit_boundary(case, Y_samples, rel_tol=1e-8) -> AuditReport:
    """Check dW/dt <= -|y_o|^2 - |y_n|^2 along boundary-layer samples."""
    from .simcore import rhs_boundary
    BB, Nl, _ = _w_matrices(case)
    slack, scale = [], []
    for y in np.atleast_2d(Y_samples):
        dW = grad_W(case, y) @ rhs_boundary(case, y)
        bound = float(np.sum((BB @ y) ** 2) + np.sum((Nl @ y) ** 2))
        slack.append(dW + bound)
        scale.append(abs(dW) + bound)
    return _report("boundary", slack, scale, rel_tol)


def nu_derivative(case, profile, gains, x, constants: LyapunovConstants, system=None) -> tuple[float, float, float]:
    """Chain-rule d(nu)/dt along the full closed loop, the quadratic bound it must respect, and the
    magnitude of the summed terms (the scale of floating-point cancellation in the first two)."""
    from .simcore import ClosedLoop
    system = system or ClosedLoop(case, profile, gains)
    x = np.asarray(x, dtype=float)
    f = system.rhs(0.0, x)
    n = 2 * case.n_inverters
    v, i = x[:n], x[n:]
    lm = system.lines
    _, BB = incidence(case)
    S = lm.Zinv @ BB.T
    y = i - S @ v
    d = constants.d
    gW = d * grad_W(case, y)
    # gradient of nu with respect to the full state
    g = np.concatenate([(1 - d) * grad_V(profile, gains, v, constants.alpha1) - S.T @ gW, gW])
    terms = g * f
    _, Nl, _ = _w_matrices(case)
    z = np.array([lyap_psi(case, profile, gains, v, constants.norm_KL), np.linalg.norm(BB @ y),
                  np.linalg.norm(Nl @ y)])
    M = constants.composite_matrix()
    roundoff = np.abs(g) @ system.rhs_magnitude(x) + np.abs(z) @ np.abs(M) @ np.abs(z)
    return float(terms.sum()), float(-z @ M @ z), float(roundoff)


def audit_full(case, profile, gains, X_samples, constants: LyapunovConstants, rel_tol=1e-8) -> AuditReport:
    """Check d(nu)/dt < 0 (and the quadratic bound) along full-state samples."""
    from .simcore import ClosedLoop
    system = ClosedLoop(case, profile, gains)
    dnus, bounds, scale = np.array([nu_derivative(case, profile, gains, x, constants, system)
                                    for x in np.atleast_2d(X_samples)]).T
    bound_slack = dnus - bounds
    bound_viol = int(np.sum(bound_slack > rel_tol * np.maximum(scale, 1e-300)))
    # strict decrease: tolerance only for samples numerically on the target set or at the origin
    rep = _report("full", dnus, scale, rel_tol,
                  {"bound_violations": bound_viol, "max_bound_slack": float(bound_slack.max()),
                   "composite_min_eig": float(np.linalg.eigvalsh(constants.composite_matrix()).min())})
    rep.violations += bound_viol
    return rep


def decrease_audit(case, profile, gains, ts, kind: str = "full", constants: LyapunovConstants | None = None,
                   rel_tol: float = 1e-8) -> AuditReport:
    """Audit a trajectory.  ``ts`` is a simcore TimeSeries or an array of samples."""
    X = ts.states if hasattr(ts, "states") else np.atleast_2d(ts)
    if kind == "boundary":
        return audit_boundary(case, X, rel_tol)
    constants = constants or lyapunov_constants(case, profile, gains)
    if kind == "reduced":
        return audit_reduced(case, profile, gains, X[:, :2 * case.n_inverters], constants, rel_tol)
    return audit_full(case, profile, gains, X, constants, rel_tol)


# --- auxiliary inequality sampling -------------------------------------------------------------

def magnitude_poly(v_star: np.ndarray, x: np.ndarray, m: int) -> float:
    tot = np.sum(v_star ** 2)
    val = 0.0
    for k in range(v_star.size):
        val += tot / v_star[k] ** (m - 1) * x[k] ** (m + 1)
        val -= np.sum(v_star[k] * v_star / v_star[k] ** (m - 1) * x[k] ** m * x)
    return float(val)


@dataclass
class LemmaReport:
    projection_min_slack: float
    contraction_min_slack: float | None
    polynomial_min_slack: float
    samples: int

    def passed(self, tol: float = 1e-10) -> bool:
        vals = [self.projection_min_slack, self.polynomial_min_slack]
        if self.contraction_min_slack is not None:
            vals.append(self.contraction_min_slack)
        return all(v >= -tol for v in vals)


def _sample_voltages(profile, rng, n):
    """Mix of generic, near-synchronous and near-origin voltages."""
    N = profile.n
    out = []
    for s in range(n):
        mode = s % 3
        if mode == 0:
            v = rng.normal(size=2 * N) * rng.uniform(0.1, 3.0)
        elif mode == 1:
            v = profile.target_voltages(rng.uniform(0, 2 * np.pi)) * rng.uniform(0.2, 2.0)
            v = v + rng.normal(scale=rng.choice([1e-6, 1e-3, 1e-1]), size=2 * N)
        else:
            v = rng.normal(scale=1e-3, size=2 * N)
        out.append(v)
    return out


def lemma_checks(case, profile, gains=None, c: float | None = None, samples: int = 1000, seed: int = 0) -> LemmaReport:
    """Sampled slacks (>= 0 means the inequality holds) of the three auxiliary inequalities."""
    rng = np.random.default_rng(seed)
    P = sync_projector(profile)
    l1, l2, l3 = [], [], []
    KL = None
    if gains is not None:
        if c is None:
            c = condition2(case, profile, gains).c
        L, _ = weighted_laplacian(case, check=False)
        KL = stacked_gain(profile, gains.kappa) - kron2(L)
    for v in _sample_voltages(profile, rng, samples):
        Pv = P @ v
        dist2 = v @ Pv
        l1.append(dist2 - Pv @ phi_stack(profile, v))
        if KL is not None:
            l2.append(-c * dist2 - Pv @ (KL @ v + gains.alpha * v))
    for s in range(samples):
        x = rng.uniform(0, 2, profile.n) * (rng.uniform(size=profile.n) > 0.2)
        if s % 4 == 0:
            x = profile.v_star * rng.uniform(0, 2) + rng.normal(scale=1e-4, size=profile.n).clip(0)
        for m in range(1, 6):
            l3.append(magnitude_poly(profile.v_star, x, m))
    return LemmaReport(float(np.min(l1)), float(np.min(l2)) if l2 else None, float(np.min(l3)), samples)
