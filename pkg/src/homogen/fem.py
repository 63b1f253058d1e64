"""Bilinear (Q1) finite elements on uniform square grids.

Two node layouts share one set of kernels:

* periodic: ``m x m`` nodes, indices wrap modulo ``m`` (unit cell problems),
* bounded: ``(m+1) x (m+1)`` nodes including the boundary (Dirichlet problems).

Nodal arrays are indexed ``U[i1, i2]`` with ``i1`` along ``x1``. Element
``(i, j)`` has flat index ``i * m + j`` and local nodes ordered
``(i, j), (i+1, j), (i+1, j+1), (i, j+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError
from .linalg import SparseMatrix, assemble_from_triplets


@dataclass(frozen=True)
class Grid:
    m: int
    lo: tuple = (0.0, 0.0)
    length: float = 1.0
    periodic: bool = False

    @property
    def h(self):
        return self.length / self.m

    @property
    def shape(self):
        return (self.m, self.m) if self.periodic else (self.m + 1, self.m + 1)

    @property
    def n_nodes(self):
        return self.shape[0] * self.shape[1]

    def axis(self):
        k = self.shape[0]
        return self.lo[0] + self.h * np.arange(k), self.lo[1] + self.h * np.arange(k)

    def node_coords(self):
        x1, x2 = self.axis()
        return np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        if not self.periodic:
            mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def connectivity(self):
        m = self.m
        i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        i, j = i.ravel(), j.ravel()
        k = self.shape[1]
        if self.periodic:
            ip, jp = (i + 1) % m, (j + 1) % m
        else:
            ip, jp = i + 1, j + 1
        return np.stack([i * k + j, ip * k + j, ip * k + jp, i * k + jp], axis=1)

    def closed(self, U):
        """Nodal array extended to ``(m+1) x (m+1)`` (wraps periodic data)."""
        U = np.asarray(U, dtype=float).reshape(self.shape)
        return np.pad(U, ((0, 1), (0, 1)), mode="wrap") if self.periodic else U


@lru_cache(maxsize=None)
def gauss_1d(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return tuple(0.5 * (x + 1.0)), tuple(0.5 * w)


def quad_rule(order=2):
    """Tensor Gauss rule on the reference square ``[0, 1]^2``: list of (s, t, weight)."""
    x, w = gauss_1d(order)
    return [(x[a], x[b], w[a] * w[b]) for a in range(order) for b in range(order)]


def ref_basis(s, t):
    phi = np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
    dphi = np.array([[-(1 - t), -(1 - s)], [1 - t, -s], [t, s], [-t, 1 - s]])
    return phi, dphi


def quad_points(grid: Grid, s, t):
    """Physical coordinates of the reference point ``(s, t)`` in every element, shape (m, m, 2)."""
    m, h = grid.m, grid.h
    x1 = grid.lo[0] + (np.arange(m) + s) * h
    x2 = grid.lo[1] + (np.arange(m) + t) * h
    return np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1)


def element_values(grid: Grid, U, s, t):
    """Value and gradient of the Q1 interpolant at ``(s, t)`` in every element."""
    C = grid.closed(U)
    u00, u10, u11, u01 = C[:-1, :-1], C[1:, :-1], C[1:, 1:], C[:-1, 1:]
    val = (1 - s) * (1 - t) * u00 + s * (1 - t) * u10 + s * t * u11 + (1 - s) * t * u01
    gx = ((1 - t) * (u10 - u00) + t * (u11 - u01)) / grid.h
    gy = ((1 - s) * (u01 - u00) + s * (u11 - u10)) / grid.h
    return val, gx, gy


def _eval(coef, x):
    if coef is None:
        return None
    if callable(coef):
        return np.asarray(coef(x), dtype=float)
    return np.asarray(coef, dtype=float)


def element_matrices(grid: Grid, A=None, V=None, B=None, c=None, order=2):
    """Element matrices of ``(A grad u + V u).grad v + (B.grad u + c u) v``.

    Coefficients are callables on physical points (arrays ``(..., 2)``) or
    constants. Returns an array ``(m*m, 4, 4)`` indexed ``[e, test, trial]``.
    """
    E = grid.m * grid.m
    h = grid.h
    K = np.zeros((E, 4, 4))
    for s, t, w in quad_rule(order):
        phi, dphi = ref_basis(s, t)
        G = dphi / h  # (4, 2)
        x = quad_points(grid, s, t).reshape(E, 2)
        wq = w * h * h
        a = _eval(A, x)
        if a is not None:
            a = np.broadcast_to(a, (E, 2, 2))
            K += wq * np.einsum("ai,eij,bj->eab", G, a, G, optimize=True)
        v = _eval(V, x)
        if v is not None:
            v = np.broadcast_to(v, (E, 2))
            K += wq * (v @ G.T)[:, :, None] * phi[None, None, :]
        b = _eval(B, x)
        if b is not None:
            b = np.broadcast_to(b, (E, 2))
            K += wq * phi[None, :, None] * (b @ G.T)[:, None, :]
        cc = _eval(c, x)
        if cc is not None:
            cc = np.broadcast_to(cc, (E,))
            K += wq * cc[:, None, None] * np.outer(phi, phi)[None]
    return K


def dof_map(grid: Grid, dirichlet=True):
    """Node -> unknown index (``-1`` for eliminated boundary nodes)."""
    if grid.periodic or not dirichlet:
        return np.arange(grid.n_nodes)
    free = ~grid.boundary_mask().ravel()
    dmap = np.full(grid.n_nodes, -1, dtype=np.int64)
    dmap[free] = np.arange(free.sum())
    return dmap


def assemble(grid: Grid, A=None, V=None, B=None, c=None, *, dirichlet=True, order=2,
             check_symmetry=True):
    """Global matrix with homogeneous Dirichlet rows/columns eliminated."""
    Ke = element_matrices(grid, A, V, B, c, order)
    dmap = dof_map(grid, dirichlet)
    conn = dmap[grid.connectivity()]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = Ke.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    n = int(dmap.max()) + 1
    return assemble_from_triplets((rows[keep], cols[keep], vals[keep]), (n, n),
                                  check_symmetry=check_symmetry)


def _scatter(grid, local, dirichlet):
    dmap = dof_map(grid, dirichlet)
    conn = dmap[grid.connectivity()].ravel()
    vals = local.reshape(-1)
    keep = conn >= 0
    return np.bincount(conn[keep], weights=vals[keep], minlength=int(dmap.max()) + 1)


def load_vector(grid: Grid, f, *, dirichlet=True, order=2):
    """``int f phi_i``."""
    E = grid.m * grid.m
    local = np.zeros((E, 4))
    for s, t, w in quad_rule(order):
        phi, _ = ref_basis(s, t)
        fx = np.broadcast_to(_eval(f, quad_points(grid, s, t).reshape(E, 2)), (E,))
        local += (w * grid.h**2) * fx[:, None] * phi[None, :]
    return _scatter(grid, local, dirichlet)


def div_load_vector(grid: Grid, H, *, dirichlet=True, order=2):
    """``-int H . grad phi_i``: weak form of ``div H`` on the right-hand side."""
    E = grid.m * grid.m
    local = np.zeros((E, 4))
    for s, t, w in quad_rule(order):
        _, dphi = ref_basis(s, t)
        Hx = np.broadcast_to(_eval(H, quad_points(grid, s, t).reshape(E, 2)), (E, 2))
        local -= (w * grid.h**2) * (Hx @ (dphi / grid.h).T)
    return _scatter(grid, local, dirichlet)


def expand(grid: Grid, x, dirichlet=True):
    """Unknown vector -> full nodal array (zeros on eliminated nodes)."""
    dmap = dof_map(grid, dirichlet)
    full = np.zeros(grid.n_nodes)
    mask = dmap >= 0
    full[mask] = x[dmap[mask]]
    return full.reshape(grid.shape)


def integrate(grid: Grid, func, order=3):
    """``int func`` where ``func(s, t, x)`` returns per-element values at a reference point."""
    total = 0.0
    for s, t, w in quad_rule(order):
        total += w * grid.h**2 * float(np.sum(func(s, t, quad_points(grid, s, t))))
    return total


def q1_norms(grid: Grid, U, order=3, region=None):
    """Squared L2 norm and squared gradient norm of the Q1 interpolant of ``U``.

    ``region`` restricts integration to elements whose centres lie in the
    box ``((a1, b1), (a2, b2))``.
    """
    mask = None
    if region is not None:
        c = quad_points(grid, 0.5, 0.5)
        (a1, b1), (a2, b2) = region
        mask = (c[..., 0] >= a1) & (c[..., 0] <= b1) & (c[..., 1] >= a2) & (c[..., 1] <= b2)
    l2 = g2 = 0.0
    for s, t, w in quad_rule(order):
        val, gx, gy = element_values(grid, U, s, t)
        if mask is not None:
            val, gx, gy = val[mask], gx[mask], gy[mask]
        l2 += w * float(np.sum(val * val))
        g2 += w * float(np.sum(gx * gx + gy * gy))
    return l2 * grid.h**2, g2 * grid.h**2


def check_grid(m, periodic=False):
    if m < 2:
        raise ConfigurationError(f"grid needs at least 2 cells per edge, got {m}")
    if periodic and (m < 4 or m % 2):
        raise ConfigurationError(f"periodic grids need n >= 4 and even, got {m}")
