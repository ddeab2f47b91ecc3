"""Uniform periodic triangulations of the unit torus."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = ["PeriodicMesh", "Prolongation", "build_uniform", "refine"]


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Structured P1 mesh of [0,1)^2 with periodic identification.

    Every square cell is split along its main diagonal into a lower
    triangle (a, b, c) and an upper triangle (a, c, d), both counterclockwise.
    ``coords`` holds the unwrapped vertex coordinates of each triangle, so
    geometry is computed without worrying about the wrap.
    """

    n: int
    nodes: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def num_nodes(self):
        return self.n * self.n

    @property
    def num_triangles(self):
        return 2 * self.n * self.n

    def node_index(self, i, j):
        return np.mod(i, self.n) + self.n * np.mod(j, self.n)

    def areas(self):
        c = self.coords
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def dissection_order(self, leaf=4):
        """Nested-dissection elimination order of the nodes.

        Separators are full lattice lines; this is enough because every mesh
        edge joins nodes at most one lattice step apart in each direction.
        The two periodic directions are opened first by removing one line each.
        """
        n = self.n

        def rec(xs, ys, px, py):
            if len(xs) * len(ys) <= leaf * leaf or (len(xs) < 3 and len(ys) < 3):
                return [i + n * j for j in ys for i in xs]
            if px:
                return rec(xs[1:], ys, False, py) + [xs[0] + n * j for j in ys]
            if py:
                return rec(xs, ys[1:], px, False) + [i + n * ys[0] for i in xs]
            if len(xs) >= len(ys):
                k = len(xs) // 2
                return (rec(xs[:k], ys, False, False) + rec(xs[k + 1:], ys, False, False)
                        + [xs[k] + n * j for j in ys])
            k = len(ys) // 2
            return (rec(xs, ys[:k], False, False) + rec(xs, ys[k + 1:], False, False)
                    + [i + n * ys[k] for i in xs])

        return np.array(rec(list(range(n)), list(range(n)), True, True), dtype=int)

    def edges(self):
        """Undirected edges as sorted node pairs, one row per triangle side."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)


def build_uniform(n):
    if int(n) != n or n < 2:
        raise ValueError(f"need an integer n >= 2, got {n!r}")
    n = int(n)
    h = 1.0 / n
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    nodes = np.column_stack([ii * h, jj * h])

    def idx(i, j):
        return np.mod(i, n) + n * np.mod(j, n)

    a = idx(ii, jj)
    b = idx(ii + 1, jj)
    c = idx(ii + 1, jj + 1)
    d = idx(ii, jj + 1)
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    triangles = np.empty((2 * n * n, 3), dtype=int)
    triangles[0::2] = lower
    triangles[1::2] = upper

    x0 = ii * h
    y0 = jj * h
    pa = np.column_stack([x0, y0])
    pb = np.column_stack([x0 + h, y0])
    pc = np.column_stack([x0 + h, y0 + h])
    pd = np.column_stack([x0, y0 + h])
    coords = np.empty((2 * n * n, 3, 2))
    coords[0::2] = np.stack([pa, pb, pc], axis=1)
    coords[1::2] = np.stack([pa, pc, pd], axis=1)
    return PeriodicMesh(n=n, nodes=nodes, triangles=triangles, coords=coords)


@dataclass(frozen=True)
class Prolongation:
    """Nodal injection of coarse P1 functions into the once-refined mesh.

    ``matrix`` has one row per fine node holding either a single 1 (coincident
    coarse node) or two entries 1/2 (midpoint of a coarse edge).
    """

    coarse_n: int
    fine_n: int
    matrix: sp.csr_matrix = field(repr=False)

    def __call__(self, values):
        return self.matrix @ np.asarray(values)

    def compose(self, other):
        """Prolongation coarse -> other.fine_n, applying ``self`` first."""
        if other.coarse_n != self.fine_n:
            raise ValueError("prolongations do not chain")
        return Prolongation(self.coarse_n, other.fine_n,
                            (other.matrix @ self.matrix).tocsr())


def _prolongation_matrix(nc):
    nf = 2 * nc
    rows, cols, vals = [], [], []
    for jf in range(nf):
        for i_f in range(nf):
            r = i_f + nf * jf
            i, j = i_f // 2, jf // 2
            pi, pj = i_f % 2, jf % 2
            if pi == 0 and pj == 0:
                pts = [(i, j)]
            elif pi == 1 and pj == 0:
                pts = [(i, j), (i + 1, j)]
            elif pi == 0 and pj == 1:
                pts = [(i, j), (i, j + 1)]
            else:
                # cell centre lies on the main diagonal
                pts = [(i, j), (i + 1, j + 1)]
            w = 1.0 / len(pts)
            for (a, b) in pts:
                rows.append(r)
                cols.append(a % nc + nc * (b % nc))
                vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf * nf, nc * nc))


def refine(mesh):
    fine = build_uniform(2 * mesh.n)
    return fine, Prolongation(mesh.n, fine.n, _prolongation_matrix(mesh.n))
