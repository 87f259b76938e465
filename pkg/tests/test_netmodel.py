import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from gridvoc.cases import ieee9_case
from gridvoc.errors import AssumptionViolated, DimensionMismatch, DisconnectedGraph, ValidationError
from gridvoc.netmodel import (J, Bus, LineBranch, NetworkCase, algebraic_connectivity, block_rotation, edge_weight,
                              incidence, kron2, line_matrices, max_weighted_degree, nullspace_basis, rotation,
                              steady_state_currents, weighted_laplacian)

from helpers import triangle, two_bus


def test_edge_weight_matches_listed_admittances(threebus):
    case, _, _ = threebus
    zb = case.z_base
    assert edge_weight(LineBranch(0, 1, 3.75 / zb, 37.5 / zb)) / zb == pytest.approx(0.02653, abs=5e-6)
    assert edge_weight(LineBranch(0, 1, 0.75 / zb, 7.5 / zb)) / zb == pytest.approx(0.1327, abs=5e-5)
    assert np.allclose(np.sort(case.weights / zb), [0.0265, 0.1327, 0.1327], atol=1e-4)


def test_edge_weight_resistive_limit():
    assert edge_weight(LineBranch(0, 1, 1.0, 1e-300)) == pytest.approx(1.0)


def test_edge_weight_equals_inverse_impedance_norm(ieee9):
    case, _, _ = ieee9
    for br in case.branches:
        Zinv = np.linalg.inv(br.resistance * np.eye(2) + br.reactance * J)
        assert edge_weight(br) == pytest.approx(np.linalg.norm(Zinv, 2), rel=1e-12)


def test_branch_invariants():
    with pytest.raises(ValidationError):
        LineBranch(0, 0, 1.0, 1.0)
    with pytest.raises(ValidationError, match="resistance"):
        LineBranch(0, 1, -1.0, 1.0)
    with pytest.raises(ValidationError):
        LineBranch(0, 1, 1.0, 0.0)
    with pytest.raises(ValidationError, match="parallel"):
        NetworkCase([Bus("a"), Bus("b")], [LineBranch(0, 1, 1, 1), LineBranch(1, 0, 1, 1)])
    with pytest.raises(ValidationError):
        NetworkCase([Bus("a")], [], omega0=0.0)
    with pytest.raises(ValidationError):
        Bus("p", "passive", shunt_b=-1.0)


def test_incidence_shapes_and_rank():
    B, BB = incidence(two_bus())
    assert np.array_equal(B, [[1.0], [-1.0]])
    assert BB.shape == (4, 2)
    B, _ = incidence(triangle())
    assert np.linalg.matrix_rank(B) == 2
    assert np.allclose(B.T @ np.ones(3), 0)


def test_laplacian_triangle_and_two_bus():
    L, LL = weighted_laplacian(triangle())
    assert np.allclose(np.linalg.eigvalsh(L), [0, 3, 3])
    assert algebraic_connectivity(L) == pytest.approx(3)
    assert max_weighted_degree(triangle()) == pytest.approx(2)
    assert np.allclose(np.sort(np.linalg.eigvalsh(LL)), np.repeat([0, 3, 3], 2))
    case = two_bus()
    L, _ = weighted_laplacian(case)
    assert algebraic_connectivity(L) == pytest.approx(2 * case.weights[0])


def test_laplacian_star():
    w = 0.7
    r = 1 / (w * np.hypot(1, 10))
    star = NetworkCase([Bus("c"), Bus("a"), Bus("b")], [LineBranch(0, 1, r, 10 * r), LineBranch(0, 2, r, 10 * r)])
    L, _ = weighted_laplacian(star)
    assert algebraic_connectivity(L) == pytest.approx(w)


def test_threebus_connectivity_in_siemens(threebus):
    case, _, _ = threebus
    L, _ = weighted_laplacian(case)
    # oracle: scipy's symmetric eigensolver on the same matrix
    lam2 = scipy.linalg.eigh(L / case.z_base, eigvals_only=True)[1]
    assert algebraic_connectivity(L) / case.z_base == pytest.approx(lam2, rel=1e-12)
    assert lam2 == pytest.approx(0.1858, abs=2e-4)
    assert max_weighted_degree(case) / case.z_base == pytest.approx(0.2654, abs=2e-4)
    assert np.linalg.norm(L, 2) <= 2 * max_weighted_degree(case) + 1e-12


def test_disconnected_graph_rejected():
    r = 0.01
    case = NetworkCase([Bus(str(k)) for k in range(4)], [LineBranch(0, 1, r, r), LineBranch(2, 3, r, r)])
    with pytest.raises(DisconnectedGraph):
        weighted_laplacian(case)


def test_nullspace_tree_triangle_ieee9():
    B, _ = incidence(two_bus())
    Bn, BBn = nullspace_basis(B)
    assert Bn.shape == (1, 0) and BBn.shape == (2, 0)
    B, _ = incidence(triangle())
    Bn, _ = nullspace_basis(B)
    assert Bn.shape == (3, 1)
    assert np.allclose(np.abs(Bn[:, 0]), 1 / np.sqrt(3))
    case = ieee9_case()
    B, _ = incidence(case)
    Bn, _ = nullspace_basis(B)
    assert Bn.shape[1] == case.n_branches - case.n_buses + 1
    assert np.allclose(B @ Bn, 0, atol=1e-12)
    # independent oracle: same subspace as scipy's SVD null space
    ref = scipy.linalg.null_space(B)
    assert np.linalg.matrix_rank(np.hstack([Bn, ref]), tol=1e-9) == ref.shape[1]


def test_steady_state_currents_hand_inverse():
    r, x = 0.02, 0.3
    case = two_bus(r, x)
    v1 = np.array([0.7, -0.2])
    i_s, i_o = steady_state_currents(case, np.concatenate([v1, [0, 0]]))
    Zinv = np.array([[r, x], [-x, r]]) / (r * r + x * x)
    assert np.allclose(i_s, Zinv @ v1, atol=1e-14)
    assert np.allclose(i_o, np.concatenate([Zinv @ v1, -Zinv @ v1]))
    i_s, _ = steady_state_currents(case, np.array([1.0, 2.0, 1.0, 2.0]))
    assert np.allclose(i_s, 0)
    with pytest.raises(DimensionMismatch):
        steady_state_currents(case, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_rotated_admittance_equals_laplacian(vals):
    case = triangle(w=3.0, ratio=7.0)
    v = np.array(vals)
    _, i_o = steady_state_currents(case, v)
    kappa = np.arctan(7.0)
    L, LL = weighted_laplacian(case)
    assert np.allclose(block_rotation(kappa, 3) @ i_o, LL @ v, atol=1e-10)


def test_rotation_and_kronecker_identities(threebus):
    R = rotation(0.3)
    assert np.allclose(R.T @ R, np.eye(2)) and np.isclose(np.linalg.det(R), 1)
    assert np.allclose(rotation(np.pi / 2), J) and np.allclose(J, -J.T)
    case, _, _ = threebus
    L, LL = weighted_laplacian(case)
    assert np.linalg.norm(LL, 2) == pytest.approx(np.linalg.norm(L, 2), rel=1e-12)
    _, BB = incidence(case)
    lm = line_matrices(case)
    Y = BB @ lm.Zinv @ BB.T
    assert np.linalg.norm(Y, 2) == pytest.approx(np.linalg.norm(L, 2), rel=1e-9)


def test_skew_symmetry_and_cycle_orthogonality(threebus):
    case, _, _ = threebus
    B, BB = incidence(case)
    _, BBn = nullspace_basis(B)
    lm = line_matrices(case)
    JM = np.kron(np.eye(case.n_branches), J)
    for S in (BB.T @ BB @ JM, lm.L @ BBn @ BBn.T @ lm.L @ JM):
        assert np.max(np.abs(S + S.T)) < 1e-12 * max(1.0, np.max(np.abs(S)))
    assert np.allclose(BBn.T @ lm.L @ lm.Zinv @ BB.T, 0, atol=1e-12)


def test_rho_flags(threebus, ieee9):
    assert threebus[0].uniform_rho
    assert threebus[0].rho * threebus[0].omega0 == pytest.approx(10.0)
    assert not ieee9[0].uniform_rho
    with pytest.raises(AssumptionViolated):
        ieee9[0].rho
