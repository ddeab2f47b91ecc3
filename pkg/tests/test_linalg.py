import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from thermophase.linalg import (ConvergenceError, LinearSolver, SingularMatrixError,
                                as_csr, block_compose, factorize, solve, spmv)


def _random_system(n, seed, density=0.2):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng) + n * sp.eye(n)
    b = rng.standard_normal(n)
    return A.tocsr(), b


def test_as_csr_canonical():
    A = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
    C = as_csr(A)
    assert C.has_canonical_format
    np.testing.assert_allclose(C.toarray(), [[0, 3], [3, 0]])
    with pytest.raises(ValueError):
        as_csr(sp.csr_matrix(np.array([[np.nan]])))


def test_spmv_dimension_check():
    with pytest.raises(ValueError):
        spmv(sp.eye(3, format="csr"), np.ones(4))
    np.testing.assert_allclose(spmv(2 * sp.eye(3, format="csr"), np.ones(3)), 2.0)


@given(st.integers(5, 40), st.integers(0, 10_000))
def test_direct_solve_matches_dense(n, seed):
    A, b = _random_system(n, seed)
    x, rep = solve(A, b)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-10, atol=1e-12)
    assert rep.residual <= 1e-12


def test_permuted_factorization():
    A, b = _random_system(30, 3)
    perm = np.random.default_rng(1).permutation(30)
    x = factorize(A, perm).solve(b)
    np.testing.assert_allclose(A @ x, b, atol=1e-11)


def test_iterative_solve():
    A, b = _random_system(60, 7)
    x, rep = solve(A, b, method="iterative", tol=1e-10)
    assert rep.method == "iterative"
    assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_singular_matrix():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        solve(A, np.ones(2))


def test_iterative_failure_reports_iterations():
    A, b = _random_system(50, 2)
    with pytest.raises(ConvergenceError) as err:
        solve(A + sp.random(50, 50, density=0.9, random_state=0) * 50, b,
              method="iterative", tol=1e-15, maxiter=1, restart=1)
    assert err.value.iterations >= 0


def test_zero_rhs():
    A, _ = _random_system(10, 1)
    x, rep = solve(A, np.zeros(10))
    assert not x.any() and rep.iterations == 0


def test_block_compose():
    A = sp.eye(2, format="csr")
    B = sp.csr_matrix(np.ones((2, 3)))
    C = block_compose([[A, B], [None, sp.eye(3)]])
    assert C.shape == (5, 5)
    np.testing.assert_allclose(C.toarray()[:2, 2:], 1.0)
    with pytest.raises(ValueError):
        block_compose([[A, sp.eye(3)], [None, sp.eye(3)]])
    with pytest.raises(ValueError):
        block_compose([[A, None], [None, None]])


@pytest.mark.parametrize("method", ["direct", "lagged", "iterative"])
def test_linear_solver_sequence(method):
    A, b = _random_system(40, 5)
    solver = LinearSolver(method, tol=1e-10)
    rng = np.random.default_rng(0)
    for k in range(4):
        Ak = A + 1e-3 * k * sp.diags(rng.standard_normal(40))
        x, _ = solver(Ak, b)
        assert np.linalg.norm(Ak @ x - b) <= 1e-10 * np.linalg.norm(b)
    if method == "lagged":
        assert solver.factorizations == 1
    if method == "direct":
        assert solver.factorizations == 4


def test_linear_solver_rejects_unknown_method():
    with pytest.raises(ValueError):
        LinearSolver("magic")
