"""Sparse storage and linear solves.

Matrices are plain ``scipy.sparse.csr_matrix`` objects kept in canonical
form (sorted, duplicate-free column indices). The direct path is SuperLU,
either with COLAMD ordering or with a caller-supplied symmetric permutation
(a nested-dissection order for mesh operators). The iterative fallback is
restarted GMRES with an incomplete-LU preconditioner.

``LinearSolver`` adds the "lagged" mode used inside Newton loops: the last
LU factorization preconditions GMRES on the current matrix and is refreshed
only when GMRES needs more than a few iterations.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "LinearSolveReport",
    "SingularMatrixError",
    "ConvergenceError",
    "as_csr",
    "spmv",
    "solve",
    "block_compose",
    "factorize",
    "LinearSolver",
]


class SingularMatrixError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, iterations):
        super().__init__(message)
        self.iterations = iterations


@dataclass
class LinearSolveReport:
    method: str
    iterations: int
    residual: float


def as_csr(A):
    """Return ``A`` as a canonical CSR matrix (copying only if needed)."""
    A = sp.csr_matrix(A)
    if not A.has_canonical_format:
        A.sum_duplicates()
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix has non-finite entries")
    return A


def spmv(A, x):
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} times {x.shape}")
    return A @ x


class Factorization:
    """Sparse LU of ``A`` (optionally under the symmetric permutation ``perm``)."""

    def __init__(self, A, perm=None):
        A = sp.csc_matrix(A)
        self.shape = A.shape
        self.perm = None if perm is None else np.asarray(perm)
        try:
            if self.perm is None:
                self.lu = spla.splu(A, permc_spec="COLAMD")
            else:
                Ap = A[self.perm][:, self.perm].tocsc()
                # the ordering is already fill-reducing; prefer diagonal pivots
                self.lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.01,
                                    options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc

    def solve(self, b):
        if self.perm is None:
            x = self.lu.solve(b)
        else:
            x = np.empty_like(b)
            x[self.perm] = self.lu.solve(b[self.perm])
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("factorization produced a non-finite solution")
        return x

    def operator(self):
        return spla.LinearOperator(self.shape, self.solve)


def factorize(A, perm=None):
    return Factorization(A, perm)


def _gmres(A, b, M, tol, restart, maxiter):
    count = [0]

    def cb(_):
        count[0] += 1

    # GMRES monitors an estimate; aim below tol so the true residual meets it
    x, info = spla.gmres(A, b, M=M, rtol=0.2 * tol, atol=0.0, restart=restart,
                         maxiter=maxiter, callback=cb, callback_type="pr_norm")
    res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    return x, res, count[0]


def solve(A, b, tol=1e-10, method="direct", restart=50, maxiter=500, perm=None):
    """Solve ``A x = b``; returns ``(x, LinearSolveReport)``.

    For ``method="direct"`` the tolerance is not used by the factorization
    itself; the achieved relative residual is still measured and reported.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), LinearSolveReport(method, 0, 0.0)

    if method == "direct":
        x = Factorization(A, perm).solve(b)
        res = np.linalg.norm(A @ x - b) / bnorm
        return x, LinearSolveReport("direct", 1, res)

    if method == "iterative":
        try:
            ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=10)
            M = spla.LinearOperator(A.shape, ilu.solve)
        except RuntimeError:
            d = A.diagonal()
            if np.any(d == 0):
                raise SingularMatrixError("zero on the diagonal")
            M = sp.diags(1.0 / d)
        x, res, its = _gmres(A, b, M, tol, restart, maxiter)
        if res > tol:
            raise ConvergenceError(f"GMRES stopped at relative residual {res:.3e}", its)
        return x, LinearSolveReport("iterative", its, res)

    raise ValueError(f"unknown method {method!r}")


def block_compose(blocks):
    """Assemble a grid of optional blocks (``None`` = zero) into one CSR matrix."""
    blocks = [list(row) for row in blocks]
    nrows = len(blocks)
    ncols = len(blocks[0])
    if any(len(row) != ncols for row in blocks):
        raise ValueError("ragged block grid")
    heights = [None] * nrows
    widths = [None] * ncols
    for i, row in enumerate(blocks):
        for j, B in enumerate(row):
            if B is None:
                continue
            r, c = B.shape
            if heights[i] not in (None, r) or widths[j] not in (None, c):
                raise ValueError(f"block ({i},{j}) has shape {B.shape}")
            heights[i], widths[j] = r, c
    if None in heights or None in widths:
        raise ValueError("every block row and column needs one sized block")
    return as_csr(sp.bmat(blocks, format="csr"))


class LinearSolver:
    """Stateful solver for the sequence of Newton systems of one run.

    ``method`` is ``"direct"`` (factor every matrix), ``"lagged"`` (reuse the
    last factorization as a GMRES preconditioner; refactor once GMRES needs
    more than ``refresh`` iterations or misses ``tol``) or ``"iterative"``
    (ILU-preconditioned GMRES). Direct solves whose measured residual misses
    ``tol`` are polished with a few preconditioned GMRES steps.
    """

    def __init__(self, method="direct", tol=1e-12, perm=None, refresh=10,
                 restart=30, maxiter=20):
        if method not in ("direct", "lagged", "iterative"):
            raise ValueError(f"unknown linear solver {method!r}")
        self.method = method
        self.tol = tol
        self.perm = perm
        self.refresh = refresh
        self.restart = restart
        self.maxiter = maxiter
        self.factorization = None
        self.factorizations = 0

    def reset(self):
        self.factorization = None

    def _direct(self, A, b, tol):
        self.factorization = Factorization(A, self.perm)
        self.factorizations += 1
        x = self.factorization.solve(b)
        res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
        its = 1
        if res > tol:
            x, res, extra = _gmres(A, b, self.factorization.operator(), tol,
                                   self.restart, self.maxiter)
            its += extra
            if res > tol:
                raise ConvergenceError(
                    f"direct solve residual {res:.3e} above {tol:.1e}", its)
        return x, LinearSolveReport("direct", its, res)

    def __call__(self, A, b, tol=None):
        """Solve ``A x = b`` to relative residual ``tol`` (default: ``self.tol``)."""
        tol = self.tol if tol is None else tol
        b = np.asarray(b, dtype=float)
        if np.linalg.norm(b) == 0.0:
            return np.zeros_like(b), LinearSolveReport(self.method, 0, 0.0)
        if self.method == "iterative":
            return solve(A, b, tol=tol, method="iterative")
        if self.method == "direct" or self.factorization is None:
            return self._direct(A, b, tol)
        x, res, its = _gmres(A, b, self.factorization.operator(), tol,
                             self.refresh, 1)
        if res <= tol and its <= self.refresh:
            return x, LinearSolveReport("iterative", its, res)
        return self._direct(A, b, tol)
