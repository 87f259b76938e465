"""Randomized inverter-only networks with certified gains, for soundness sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .certify import condition2
from .dvoc import GainSettings, case_kappa
from .errors import GridVocError
from .netmodel import Bus, LineBranch, NetworkCase
from .setpoints import SetpointProfile, solve_angles


@dataclass(frozen=True)
class RandomCaseSettings:
    n_min: int = 2
    n_max: int = 5
    rho: tuple = (1e-4, 4e-4)  # common l/r ratio, seconds
    admittance: tuple = (5.0, 15.0)  # p.u.
    extra_edge_prob: float = 0.7
    p_max: float = 0.3
    v_band: tuple = (0.97, 1.03)
    alpha_share: tuple = (0.3, 0.6)  # share of the feasible margin spent on alpha
    eta_share: float = 0.9  # share of the certified gain bound
    omega0: float = 2 * np.pi * 50


def random_network(rng: np.random.Generator, n: int, cfg: RandomCaseSettings = RandomCaseSettings()) -> NetworkCase:
    """Random spanning tree plus random chords, all lines sharing one l/r ratio."""
    rho = rng.uniform(*cfg.rho)
    w0 = cfg.omega0
    edges = {(int(rng.integers(k)), k) for k in range(1, n)}
    for a in range(n):
        for b in range(a + 1, n):
            if rng.uniform() < cfg.extra_edge_prob:
                edges.add((a, b))
    branches = []
    for a, b in sorted(edges):
        z = 1.0 / rng.uniform(*cfg.admittance)
        r = z / np.hypot(1.0, w0 * rho)
        branches.append(LineBranch(a, b, r, w0 * rho * r))
    return NetworkCase([Bus(str(k + 1)) for k in range(n)], branches, w0, name=f"random{n}")


def random_certified_case(rng: np.random.Generator, cfg: RandomCaseSettings = RandomCaseSettings(),
                          max_tries: int = 100) -> tuple[NetworkCase, SetpointProfile, GainSettings]:
    """Draw until the angle-form certificate passes; gains are in 1/s."""
    for _ in range(max_tries):
        n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
        case = random_network(rng, n, cfg)
        v = rng.uniform(*cfg.v_band, n)
        p = rng.uniform(-cfg.p_max, cfg.p_max, n)
        try:
            profile = solve_angles(case, p, v)
        except GridVocError:
            continue
        probe = GainSettings(1.0, 1e-9, case.omega0, case_kappa(case), pu_time=False)
        room = condition2(case, profile, probe).c_max
        if room <= 0:
            continue
        gains = probe.replace(alpha=rng.uniform(*cfg.alpha_share) * room)
        cert = condition2(case, profile, gains)
        if cert.c_max <= 0:
            continue
        gains = gains.replace(eta=cfg.eta_share * cert.eta_bound)
        if condition2(case, profile, gains).ok:
            return case, profile, gains
    raise RuntimeError("no certified case found; widen the sampling ranges")
