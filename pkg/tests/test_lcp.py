import numpy as np
import pytest
from hypothesis import given, strategies as st

from freetarget.errors import NonConvergence
from freetarget.grid import GridSpec, ScalarField
from freetarget.lcp import LcpProblem, StencilOperator, natural_residual, solve_lcp

from oracles import lcp_by_enumeration


def _three_node(q_inner, h=0.25):
    g = GridSpec.uniform(0.0, 4 * h, h, 1)
    q = np.zeros(5)
    q[1:4] = q_inner
    return g, StencilOperator.neg_laplacian(g), ScalarField(g, q)


def test_three_node_problem_matches_enumeration():
    h = 0.25
    g, A, q = _three_node(np.array([1.0, -5.0, 1.0]) / h**2, h)
    sol = solve_lcp(LcpProblem(A, q))
    # all three nodes active; enumeration of the 8 active sets gives this
    assert np.allclose(sol.w.values[1:4], [1.5, 4.0, 1.5], atol=1e-9)
    M = (2 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1)) / h**2
    (ref,) = lcp_by_enumeration(M, q.values[1:4])
    assert np.allclose(sol.w.values[1:4], ref, atol=1e-9)


def test_zero_source_gives_zero():
    g, A, q = _three_node(np.array([1.0, 2.0, 3.0]))
    assert np.all(solve_lcp(LcpProblem(A, q)).w.values == 0.0)


def test_residual_reported_below_tolerance():
    g, A, q = _three_node(np.array([-1.0, -3.0, 2.0]) * 16)
    sol = solve_lcp(LcpProblem(A, q, tolerance=1e-12))
    r = natural_residual(A, q.values, sol.w.values)
    assert np.max(np.abs(r)) <= 1e-12
    assert sol.residual <= 1e-12


def test_nonconvergence_carries_residual():
    g = GridSpec.uniform(0.0, 1.0, 1 / 64, 1)
    A = StencilOperator.neg_laplacian(g)
    q = ScalarField(g, -np.ones(g.shape))
    with pytest.raises(NonConvergence) as exc:
        solve_lcp(LcpProblem(A, q, max_sweeps=10, omega=1.0))
    assert exc.value.residual > 0


def test_bad_relaxation_rejected():
    g, A, q = _three_node(np.zeros(3))
    with pytest.raises(ValueError):
        LcpProblem(A, q, omega=2.0)


def test_upper_bound_is_respected():
    g, A, q = _three_node(np.array([-10.0, -10.0, -10.0]))
    up = np.full(5, 0.05)
    sol = solve_lcp(LcpProblem(A, q, upper=up))
    assert np.all(sol.w.values <= 0.05 + 1e-15)


def test_two_dimensional_against_enumeration():
    g = GridSpec.uniform(0.0, 1.0, 1 / 3, 2)  # 2x2 interior
    A = StencilOperator.neg_laplacian(g)
    q = np.zeros(g.shape)
    q[1:3, 1:3] = [[-9.0, 30.0], [4.0, -20.0]]
    sol = solve_lcp(LcpProblem(A, ScalarField(g, q)))
    M = np.zeros((4, 4))
    for k in range(4):
        e = np.zeros(g.shape)
        e[1 + k // 2, 1 + k % 2] = 1.0
        M[:, k] = A.apply(e)[1:3, 1:3].ravel()
    (ref,) = lcp_by_enumeration(M, q[1:3, 1:3].ravel())
    assert np.allclose(sol.w.values[1:3, 1:3].ravel(), ref, atol=1e-9)


@given(st.lists(st.floats(-50, 50), min_size=5, max_size=5))
def test_random_five_node_problems_match_enumeration(qs):
    h = 1 / 6
    g = GridSpec.uniform(0.0, 1.0, h, 1)
    q = np.zeros(7)
    q[1:6] = qs
    A = StencilOperator.neg_laplacian(g)
    sol = solve_lcp(LcpProblem(A, ScalarField(g, q), tolerance=1e-11))
    M = (2 * np.eye(5) - np.eye(5, k=1) - np.eye(5, k=-1)) / h**2
    sols = lcp_by_enumeration(M, q[1:6])
    assert len(sols) >= 1  # M-matrix: unique solution
    assert np.allclose(sol.w.values[1:6], sols[0], atol=1e-8)


@given(st.lists(st.floats(-50, 50), min_size=5, max_size=5))
def test_complementarity_holds(qs):
    g = GridSpec.uniform(0.0, 1.0, 1 / 6, 1)
    q = np.zeros(7)
    q[1:6] = qs
    A = StencilOperator.neg_laplacian(g)
    w = solve_lcp(LcpProblem(A, ScalarField(g, q), tolerance=1e-11)).w.values
    r = (A.apply(w) + q)[1:6]
    assert np.all(w >= 0)
    assert np.all(r >= -1e-7)
    assert np.all(np.abs(w[1:6] * r) <= 1e-7 * (1 + np.abs(r)))
