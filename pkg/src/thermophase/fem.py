"""P1 finite elements on a periodic mesh: assembly, quadrature, norms."""

import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr

__all__ = [
    "FeFunction",
    "QuadratureRule",
    "EDGE_MIDPOINT",
    "Assembler",
    "assembler",
    "local_mass",
    "local_stiffness",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_weighted_load",
    "interpolate",
    "norm_L2",
    "norm_H1semi",
    "norm_H1",
]


@dataclass(frozen=True)
class FeFunction:
    mesh: object = field(repr=False)
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.mesh.num_nodes,):
            raise ValueError(
                f"expected {self.mesh.num_nodes} coefficients, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coefficients", c)


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle in barycentric coordinates.

    Weights sum to one; they are multiplied by the element area at use.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-14:
            raise ValueError("weights must be positive and sum to 1")


EDGE_MIDPOINT = QuadratureRule(
    points=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    weights=np.full(3, 1.0 / 3.0),
    degree=2,
)


def _gradients(coords):
    """Gradients of the three barycentric hat functions, shape (E, 3, 2)."""
    coords = np.asarray(coords, dtype=float)
    squeeze = coords.ndim == 2
    c = coords[None] if squeeze else coords
    x, y = c[..., 0], c[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) \
        - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty(c.shape)
    for a in range(3):
        b, d = (a + 1) % 3, (a + 2) % 3
        g[:, a, 0] = (y[:, b] - y[:, d]) / det
        g[:, a, 1] = (x[:, d] - x[:, b]) / det
    area = 0.5 * det
    return (g[0], area[0]) if squeeze else (g, area)


def local_mass(coords):
    _, area = _gradients(coords)
    return area / 12.0 * (np.ones((3, 3)) + np.eye(3))


def local_stiffness(coords):
    g, area = _gradients(coords)
    return area * g @ g.T


class Assembler:
    """Precomputed element data and a fixed CSR pattern for one mesh.

    All element matrices are scattered into the common nodal-adjacency
    pattern with ``np.bincount``, so every assembled operator shares the same
    ``indptr``/``indices`` and repeated assembly is deterministic.
    """

    def __init__(self, mesh, rule=EDGE_MIDPOINT):
        self.mesh = mesh
        self.rule = rule
        self.tri = mesh.triangles
        self.grads, self.area = _gradients(mesh.coords)
        self.phi = np.asarray(rule.points)          # (k, 3): phi_a at point q
        self.wq = self.area[:, None] * np.asarray(rule.weights)[None, :]
        # products phi_a phi_b at each point, flattened row-major over (a, b)
        self.phi2 = np.einsum("qa,qb->qab", self.phi, self.phi).reshape(len(self.phi), 9)
        N = mesh.num_nodes

        rows = np.repeat(self.tri, 3, axis=1).ravel()
        cols = np.tile(self.tri, (1, 3)).ravel()
        pattern = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(N, N))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr = pattern.indptr
        self.indices = pattern.indices
        self.nnz = pattern.nnz
        # position of each local (a, b) entry inside the CSR data array
        pos = np.empty(rows.size, dtype=np.int64)
        for k in range(rows.size):
            r = rows[k]
            lo, hi = self.indptr[r], self.indptr[r + 1]
            pos[k] = lo + np.searchsorted(self.indices[lo:hi], cols[k])
        self.scatter = pos
        self.shape = (N, N)

    def matrix(self, local):
        """CSR matrix from element matrices ``local`` of shape (E, 3, 3)."""
        data = np.bincount(self.scatter, weights=local.reshape(-1),
                           minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=self.shape)

    def at_quad(self, u):
        """Values of the nodal field ``u`` at every quadrature point, (E, k)."""
        return np.asarray(u)[self.tri] @ self.phi.T

    def load(self, f):
        """Vector of sum_q w_q f_q phi_i(x_q) for pointwise values ``f`` (E, k)."""
        local = (self.wq * f) @ self.phi
        return np.bincount(self.tri.ravel(), weights=local.ravel(),
                           minlength=self.mesh.num_nodes)

    def weighted_mass(self, f):
        """Matrix of sum_q w_q f_q phi_i phi_j (Jacobian of ``load``)."""
        return self.matrix((self.wq * f) @ self.phi2)

    def integrate(self, f):
        return float(np.sum(self.wq * f))

    def mass(self):
        return self.weighted_mass(np.ones_like(self.wq))

    def stiffness(self, coef=None):
        """Matrix of int (C grad phi_j) . grad phi_i with constant or per-element C."""
        if coef is None:
            local = np.einsum("e,eax,ebx->eab", self.area, self.grads, self.grads)
        else:
            C = np.broadcast_to(coef, (self.area.size, 2, 2))
            local = np.einsum("e,eax,exy,eby->eab", self.area, self.grads, C,
                              self.grads)
        return self.matrix(local)

    def advection(self, vec):
        """Matrix of int phi_i (b . grad phi_j), constant or per-element ``b``."""
        b = np.broadcast_to(vec, (self.area.size, 2))
        bg = np.einsum("ex,ebx->eb", b, self.grads)         # (E, 3) over j
        local = (self.area / 3.0)[:, None, None] * np.broadcast_to(
            bg[:, None, :], (self.area.size, 3, 3))
        return self.matrix(local)

    def grad(self, u):
        """Element-wise constant gradient of ``u``, shape (E, 2)."""
        return np.einsum("ea,eax->ex", np.asarray(u)[self.tri], self.grads)


_cache = weakref.WeakKeyDictionary()


def assembler(mesh):
    """Shared ``Assembler`` for ``mesh`` (built once per mesh object)."""
    a = _cache.get(mesh)
    if a is None:
        a = _cache[mesh] = Assembler(mesh)
    return a


def assemble_mass(mesh):
    return as_csr(assembler(mesh).mass())


def assemble_stiffness(mesh):
    return as_csr(assembler(mesh).stiffness())


def assemble_weighted_load(mesh, rule, integrand, *fields):
    """Load vector of ``integrand(*fields)`` against every hat function.

    ``fields`` are nodal vectors; ``integrand`` receives their values at the
    quadrature points (arrays of shape (E, k)) and returns pointwise values.
    """
    asm = assembler(mesh) if rule is EDGE_MIDPOINT else Assembler(mesh, rule)
    vals = [asm.at_quad(f.coefficients if isinstance(f, FeFunction) else f)
            for f in fields]
    f = np.broadcast_to(np.asarray(integrand(*vals), dtype=float), asm.wq.shape)
    bad = np.argwhere(~np.isfinite(f))
    if bad.size:
        e, q = bad[0]
        raise FloatingPointError(
            f"integrand not finite on element {e} at quadrature point {q}")
    return asm.load(f)


def interpolate(g, mesh):
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    vals = np.broadcast_to(np.asarray(g(x, y), dtype=float), x.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("interpolated function is not finite at every node")
    return FeFunction(mesh, vals)


def _coef(f):
    return f.coefficients


def norm_L2(f):
    c = _coef(f)
    return float(np.sqrt(max(c @ (assemble_mass(f.mesh) @ c), 0.0)))


def norm_H1semi(f):
    c = _coef(f)
    return float(np.sqrt(max(c @ (assemble_stiffness(f.mesh) @ c), 0.0)))


def norm_H1(f):
    return float(np.sqrt(norm_L2(f) ** 2 + norm_H1semi(f) ** 2))
