"""Network model: topology, line impedances, graph matrices and frame rotations.

Everything here is per-unit with time in seconds, so a line with per-unit
reactance ``x`` has inductance ``x / omega0`` (p.u. * s) and a shunt with
susceptance ``b`` has capacitance ``b / omega0``.

Bus ordering convention: inverter buses come first (indices ``0..N-1``),
followed by passive buses.  Extended ("Kronecker") matrices act on stacked
two-dimensional alpha-beta vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (AssumptionViolated, DimensionMismatch, DisconnectedGraph, SingularImpedance,
                     ValidationError)

I2 = np.eye(2)
J = np.array([[0.0, -1.0], [1.0, 0.0]])

RHO_SPREAD_TOL = 1e-6
CONNECTIVITY_TOL = 1e-9


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def kron2(a: np.ndarray) -> np.ndarray:
    """Lift an n x m matrix acting on buses/lines to 2-vectors."""
    return np.kron(np.asarray(a, dtype=float), I2)


def block_rotation(theta: float, n: int) -> np.ndarray:
    return np.kron(np.eye(n), rotation(theta))


def block_j(n: int) -> np.ndarray:
    return np.kron(np.eye(n), J)


def blocks(x: np.ndarray) -> np.ndarray:
    """View a stacked 2n vector as an (n, 2) array."""
    return np.asarray(x).reshape(-1, 2)


@dataclass(frozen=True)
class LineBranch:
    from_bus: int
    to_bus: int
    resistance: float  # p.u.
    reactance: float  # p.u., omega0 * inductance

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValidationError(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if not (np.isfinite(self.resistance) and self.resistance > 0):
            raise ValidationError(
                f"branch {self.from_bus}-{self.to_bus}: resistance must be > 0, got {self.resistance}")
        if not (np.isfinite(self.reactance) and self.reactance > 0):
            raise ValidationError(
                f"branch {self.from_bus}-{self.to_bus}: reactance must be > 0, got {self.reactance}")

    def inductance(self, omega0: float) -> float:
        return self.reactance / omega0

    def impedance(self, omega0: float | None = None) -> np.ndarray:
        """2x2 impedance r*I + x*J acting on alpha-beta vectors at omega0."""
        return self.resistance * I2 + self.reactance * J


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = "inverter"
    shunt_b: float | None = None  # p.u. susceptance at omega0
    load_r: float | None = None  # p.u. series RL load
    load_x: float | None = None

    def __post_init__(self):
        if self.kind not in ("inverter", "passive"):
            raise ValidationError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.kind == "passive":
            if self.shunt_b is None or not self.shunt_b > 0:
                raise ValidationError(f"bus {self.id}: passive bus needs shunt capacitance > 0")
            has_r, has_x = self.load_r is not None, self.load_x is not None
            if has_r != has_x:
                raise ValidationError(f"bus {self.id}: load needs both resistance and inductance")
            if has_r and not (self.load_r > 0 and self.load_x > 0):
                raise ValidationError(f"bus {self.id}: load parameters must be > 0")
        elif any(val is not None for val in (self.shunt_b, self.load_r, self.load_x)):
            raise ValidationError(f"bus {self.id}: inverter buses carry no shunt or load")

    @property
    def has_load(self) -> bool:
        return self.load_r is not None


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple
    branches: tuple
    omega0: float = 2 * np.pi * 50
    base_power: float = 1.0
    base_voltage: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.omega0 > 0:
            raise ValidationError("omega0 must be positive")
        if not (self.base_power > 0 and self.base_voltage > 0):
            raise ValidationError("base power and voltage must be positive")
        kinds = [b.kind for b in self.buses]
        if "inverter" not in kinds:
            raise ValidationError("case needs at least one inverter")
        n_inv = kinds.count("inverter")
        if any(k != "inverter" for k in kinds[:n_inv]):
            raise ValidationError("inverter buses must precede passive buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus ids")
        seen = set()
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if not 0 <= end < len(self.buses):
                    raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: bus index out of range")
            pair = frozenset((br.from_bus, br.to_bus))
            if pair in seen:
                raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: parallel branch")
            seen.add(pair)

    # sizes
    @property
    def n_inverters(self) -> int:
        return sum(b.kind == "inverter" for b in self.buses)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_passive(self) -> int:
        return self.n_buses - self.n_inverters

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def load_buses(self) -> list[int]:
        return [k for k, b in enumerate(self.buses) if b.kind == "passive" and b.has_load]

    @property
    def z_base(self) -> float:
        return self.base_voltage ** 2 / self.base_power

    def index_of(self, bus_id) -> int:
        for k, b in enumerate(self.buses):
            if str(b.id) == str(bus_id):
                return k
        raise ValidationError(f"unknown bus id {bus_id!r}")

    def branch_index(self, a: int, b: int) -> int:
        for idx, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == {a, b}:
                return idx
        raise ValidationError(f"no branch between bus indices {a} and {b}")

    # per-line arrays
    @cached_property
    def r(self) -> np.ndarray:
        return np.array([br.resistance for br in self.branches])

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([br.reactance for br in self.branches])

    @cached_property
    def ell(self) -> np.ndarray:
        return self.x / self.omega0

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([edge_weight(br) for br in self.branches])

    @cached_property
    def rho_per_line(self) -> np.ndarray:
        """Line time constants l/r in seconds."""
        return self.ell / self.r

    @cached_property
    def uniform_rho(self) -> bool:
        if self.n_branches == 0:
            return True
        rho = self.rho_per_line
        return bool((rho.max() - rho.min()) / rho.mean() < RHO_SPREAD_TOL)

    @property
    def rho(self) -> float:
        """Common l/r ratio; raises unless every line shares it."""
        if not self.uniform_rho:
            raise AssumptionViolated("lines do not share a common l/r ratio")
        return float(self.rho_per_line.mean()) if self.n_branches else 0.0

    def with_branch(self, index: int, branch: LineBranch) -> "NetworkCase":
        branches = list(self.branches)
        branches[index] = branch
        return NetworkCase(self.buses, branches, self.omega0, self.base_power, self.base_voltage, self.name)

    def with_bus(self, index: int, bus: Bus) -> "NetworkCase":
        buses = list(self.buses)
        buses[index] = bus
        return NetworkCase(buses, self.branches, self.omega0, self.base_power, self.base_voltage, self.name)


def line_admittance(r: float, x: float) -> float:
    return 1.0 / np.hypot(r, x)


def edge_weight(branch: LineBranch, omega0: float | None = None) -> float:
    """Admittance magnitude 1/|r + j*omega0*l| of a branch."""
    return line_admittance(branch.resistance, branch.reactance)


def incidence(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """Oriented incidence matrix (+1 at from_bus, -1 at to_bus) and its lift."""
    B = np.zeros((case.n_buses, case.n_branches))
    for l, br in enumerate(case.branches):
        B[br.from_bus, l] = 1.0
        B[br.to_bus, l] = -1.0
    return B, kron2(B)


def weighted_laplacian(case: NetworkCase, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    B, _ = incidence(case)
    L = B @ np.diag(case.weights) @ B.T
    if check:
        check_connected(case, L)
    return L, kron2(L)


def algebraic_connectivity(L: np.ndarray) -> float:
    if L.shape[0] < 2:
        return 0.0
    ev = np.linalg.eigvalsh(L)
    return float(max(ev[1], 0.0))


def max_weighted_degree(case: NetworkCase) -> float:
    deg = np.zeros(case.n_buses)
    for w, br in zip(case.weights, case.branches):
        deg[br.from_bus] += w
        deg[br.to_bus] += w
    return float(deg.max())


def check_connected(case: NetworkCase, L: np.ndarray | None = None) -> None:
    if case.n_buses == 1:
        return
    if L is None:
        L, _ = weighted_laplacian(case, check=False)
    if case.n_branches == 0 or algebraic_connectivity(L) <= CONNECTIVITY_TOL * max_weighted_degree(case):
        raise DisconnectedGraph(f"network {case.name!r} is not connected")


def nullspace_basis(B: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Cycle-space basis of an incidence matrix by pivoted row reduction.

    Columns are normalized to unit length; for incidence matrices each one is a
    signed fundamental cycle.
    """
    A = np.array(B, dtype=float)
    m, n = A.shape
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        p = row + int(np.argmax(np.abs(A[row:, col])))
        if abs(A[p, col]) < tol:
            continue
        A[[row, p]] = A[[p, row]]
        A[row] /= A[row, col]
        for other in range(m):
            if other != row and A[other, col] != 0.0:
                A[other] -= A[other, col] * A[row]
        pivots.append(col)
        row += 1
    free = [c for c in range(n) if c not in pivots]
    Bn = np.zeros((n, len(free)))
    for k, f in enumerate(free):
        Bn[f, k] = 1.0
        for i, pc in enumerate(pivots):
            Bn[pc, k] = -A[i, f]
        Bn[:, k] /= np.linalg.norm(Bn[:, k])
    return Bn, kron2(Bn)


@dataclass(frozen=True)
class LineMatrices:
    R: np.ndarray
    L: np.ndarray
    Z: np.ndarray
    Zinv: np.ndarray
    Linv: np.ndarray


def line_matrices(case: NetworkCase) -> LineMatrices:
    """Stacked R_T, L_T, Z_T = R_T + omega0 * J_M * L_T and inverses."""
    M = case.n_branches
    if M and np.any(np.hypot(case.r, case.x) == 0):
        raise SingularImpedance("a line has zero impedance")
    R = kron2(np.diag(case.r))
    L = kron2(np.diag(case.ell))
    Z = R + case.omega0 * block_j(M) @ L
    Zinv = np.zeros_like(Z)
    for l in range(M):
        s = slice(2 * l, 2 * l + 2)
        Zinv[s, s] = np.linalg.inv(Z[s, s])
    Linv = kron2(np.diag(1.0 / case.ell))
    return LineMatrices(R, L, Z, Zinv, Linv)


def admittance_operator(case: NetworkCase) -> np.ndarray:
    """Quasi-steady-state map from bus voltages to bus output currents."""
    _, BB = incidence(case)
    lm = line_matrices(case)
    return BB @ lm.Zinv @ BB.T


def steady_state_currents(case: NetworkCase, v: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Phasor-steady line currents i_s and bus output currents i_o = B i_s."""
    v = np.asarray(v, dtype=float)
    if v.shape != (2 * case.n_buses,):
        raise DimensionMismatch(f"expected {2 * case.n_buses} voltage entries, got {v.shape}")
    _, BB = incidence(case)
    lm = line_matrices(case)
    i_s = lm.Zinv @ (BB.T @ v)
    return i_s, BB @ i_s
