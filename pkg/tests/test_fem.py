import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from thermophase.fem import (EDGE_MIDPOINT, Assembler, FeFunction, QuadratureRule,
                             assemble_mass, assemble_stiffness, assemble_weighted_load,
                             interpolate, local_mass, local_stiffness, norm_H1,
                             norm_H1semi, norm_L2)
from thermophase.mesh import build_uniform


def _dense_mass(mesh):
    # independent element loop with the closed-form P1 mass matrix
    N = mesh.num_nodes
    M = np.zeros((N, N))
    loc = mesh.h**2 / 24 * (np.ones((3, 3)) + np.eye(3))
    for tri in mesh.triangles:
        for a in range(3):
            for b in range(3):
                M[tri[a], tri[b]] += loc[a, b]
    return M


def test_local_matrices():
    h = 0.25
    right = np.array([[0, 0], [h, 0], [0, h]])
    np.testing.assert_allclose(local_mass(right) * 24 / h**2,
                               [[2, 1, 1], [1, 2, 1], [1, 1, 2]], atol=1e-14)
    np.testing.assert_allclose(local_stiffness(right),
                               0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]),
                               atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_mass_matches_element_loop(n):
    m = build_uniform(n)
    M = assemble_mass(m)
    np.testing.assert_allclose(M.toarray(), _dense_mass(m), atol=1e-15)
    assert abs(M.sum() - 1.0) < 1e-14
    assert abs(M - M.T).max() == 0
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


@pytest.mark.parametrize("n", [2, 4, 7])
def test_stiffness_kernel_and_definiteness(n, rng):
    m = build_uniform(n)
    K = assemble_stiffness(m)
    assert abs(K - K.T).max() < 1e-14
    np.testing.assert_allclose(K @ np.ones(m.num_nodes), 0, atol=1e-13)
    v = rng.standard_normal(m.num_nodes)
    v -= v.mean()
    assert v @ K @ v > 0
    ev = np.linalg.eigvalsh(K.toarray())
    assert ev[0] > -1e-12 and ev[1] > 1e-8          # one-dimensional kernel


def test_permuted_element_order_gives_same_matrices(rng):
    m = build_uniform(4)
    a = Assembler(m)
    local = rng.standard_normal((m.num_triangles, 3, 3))
    A1 = a.matrix(local)
    p = rng.permutation(m.num_triangles)
    rows = np.repeat(m.triangles[p], 3, axis=1).ravel()
    cols = np.tile(m.triangles[p], (1, 3)).ravel()
    A2 = sp.csr_matrix((local[p].ravel(), (rows, cols)), shape=A1.shape)
    assert abs(A1 - A2).max() < 1e-14


def test_integral_of_x_interpolant():
    m = build_uniform(8)
    # on the torus, the P1 interpolant of x has a ramp back down on the last
    # column of cells; its exact integral is the mean of nodal values
    u = interpolate(lambda x, y: x, m)
    exact = np.mean(u.coefficients)
    assert abs(np.sum(assemble_mass(m) @ u.coefficients) - exact) < 1e-14


def test_weighted_load_examples():
    m = build_uniform(3)
    one = assemble_weighted_load(m, EDGE_MIDPOINT, lambda: 1.0)
    assert abs(one.sum() - 1.0) < 1e-14
    zero = assemble_weighted_load(m, EDGE_MIDPOINT, lambda u: 0 * u, np.ones(9))
    assert not zero.any()


@given(st.integers(2, 6), st.integers(0, 1000))
def test_weighted_load_reproduces_mass(n, seed):
    m = build_uniform(n)
    u = np.random.default_rng(seed).standard_normal(m.num_nodes)
    f = assemble_weighted_load(m, EDGE_MIDPOINT, lambda v: v, u)
    np.testing.assert_allclose(f, assemble_mass(m) @ u, atol=1e-13)


def test_weighted_load_reports_nonfinite():
    m = build_uniform(2)
    u = np.ones(4)
    u[0] = 0.0
    with pytest.raises(FloatingPointError, match="element"), np.errstate(all="ignore"):
        assemble_weighted_load(m, EDGE_MIDPOINT, lambda v: 1.0 / (v - v), u)


def test_quadrature_rule_validation():
    with pytest.raises(ValueError):
        QuadratureRule(points=np.eye(3), weights=np.array([0.5, 0.5, 0.5]), degree=1)
    with pytest.raises(ValueError):
        QuadratureRule(points=np.eye(3), weights=np.array([1.0, 0.5, -0.5]), degree=1)


def test_edge_midpoint_rule_is_degree_two_exact():
    # monomials on the reference triangle: int x^a y^b = a! b! / (a + b + 2)!
    from math import factorial
    rule = EDGE_MIDPOINT
    verts = np.array([[0, 0], [1, 0], [0, 1]])
    pts = rule.points @ verts
    for a in range(3):
        for b in range(3 - a):
            approx = 0.5 * np.sum(rule.weights * pts[:, 0] ** a * pts[:, 1] ** b)
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert abs(approx - exact) < 1e-15


def test_fe_function_validation():
    m = build_uniform(2)
    with pytest.raises(ValueError):
        FeFunction(m, np.ones(5))
    with pytest.raises(ValueError):
        FeFunction(m, np.array([1.0, np.inf, 0, 0]))


def test_interpolate_examples():
    m = build_uniform(4)
    assert np.all(interpolate(lambda x, y: 5 + 0 * x, m).coefficients == 5)
    tp = 2 * np.pi
    rho0 = interpolate(lambda x, y: 0.5 + 0.01 * np.cos(tp * x) * np.cos(tp * y), m)
    theta0 = interpolate(lambda x, y: 1 + 0.6 * np.sin(tp * x) * np.sin(tp * y), m)
    assert rho0.coefficients[m.node_index(0, 0)] == pytest.approx(0.51, abs=1e-15)
    assert theta0.coefficients[m.node_index(1, 1)] == pytest.approx(1.6, abs=1e-15)
    with pytest.raises(ValueError), np.errstate(all="ignore"):
        interpolate(lambda x, y: 1 / (x * 0), m)


def test_norm_examples():
    m = build_uniform(4)
    c = FeFunction(m, np.full(16, -3.0))
    assert norm_L2(c) == pytest.approx(3.0, rel=1e-14)
    assert norm_H1semi(c) == pytest.approx(0.0, abs=1e-12)


def test_sin_l2_norm_converges_to_half():
    errs = []
    for n in (8, 16, 32, 64):
        m = build_uniform(n)
        u = interpolate(lambda x, y: np.sin(2 * np.pi * x), m)
        errs.append(abs(norm_L2(u) ** 2 - 0.5))
    assert errs[-1] < 1e-3
    # interpolation error of order h^2
    assert all(e1 > 3 * e2 for e1, e2 in zip(errs, errs[1:]))


@given(st.integers(2, 6), st.integers(0, 1000))
def test_h1_norm_decomposition(n, seed):
    m = build_uniform(n)
    f = FeFunction(m, np.random.default_rng(seed).standard_normal(m.num_nodes))
    assert norm_H1(f) ** 2 == pytest.approx(norm_L2(f) ** 2 + norm_H1semi(f) ** 2,
                                            rel=1e-14)
