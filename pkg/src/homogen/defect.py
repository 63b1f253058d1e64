"""Correctors for periodic media with a localized defect.

With ``A = A_per + A_0`` and ``V = V_per + V_0`` (``A_0``, ``V_0`` Gaussian
bumps) the corrector splits as ``chi_0 = chi_per + w`` where ``chi_per`` is the
periodic corrector of ``(A_per, V_per)`` and ``w`` solves

    -div(A grad w) = div(A_0 grad chi_per + V_0)

on ``[-L, L]^2`` with ``w = 0`` on the box boundary. The periodic part is
tiled onto the box grid by index, so the discrete periodic residual cancels
exactly and a zero defect gives ``w = 0`` identically.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cell import CELL_TOL, CellSolution, solve_correctors
from .errors import ConfigurationError, TruncationError
from .fields import CoefficientField
from .linalg import solve_spd

DEFECT_TOL = 1e-10
BOUNDARY_STRIP = 2.0


def solve_periodic_part(A_per: CoefficientField, V_per: CoefficientField | None, n,
                        *, tol=CELL_TOL) -> CellSolution:
    return solve_correctors(A_per.periodic_part(),
                            None if V_per is None else V_per.periodic_part(), n=n, tol=tol)


def box_grid(L, n) -> fem.Grid:
    return fem.Grid(2 * L * n, (-float(L), -float(L)), 2.0 * L)


def tile(U, L):
    """Tile a periodic nodal array onto the closed ``[-L, L]^2`` node set."""
    n = U.shape[0]
    idx = np.arange(2 * L * n + 1) % n
    return U[np.ix_(idx, idx)]


def periodic_q1_gradient(U, x):
    """Gradient of the periodic Q1 interpolant of ``U`` at points ``x`` (not on element edges)."""
    n = U.shape[0]
    z = np.mod(x, 1.0) * n
    i = np.floor(z).astype(int)
    s, t = (z - i)[..., 0], (z - i)[..., 1]
    i0, j0 = i[..., 0] % n, i[..., 1] % n
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    u00, u10, u11, u01 = U[i0, j0], U[i1, j0], U[i1, j1], U[i0, j1]
    gx = ((1 - t) * (u10 - u00) + t * (u11 - u01)) * n
    gy = ((1 - s) * (u01 - u00) + s * (u11 - u10)) * n
    return np.stack([gx, gy], axis=-1)


def _check_support(A, V, L):
    if L < 4 or int(L) != L:
        raise ConfigurationError(f"box half-width must be an integer >= 4, got {L}")
    for c in (A, V):
        if c is None:
            continue
        for g in c.gaussians:
            reach = max(abs(g.center[0]), abs(g.center[1])) + 3 * g.sigma
            if reach > L - BOUNDARY_STRIP:
                raise TruncationError(
                    f"defect at {g.center} with sigma {g.sigma} reaches {reach:g}, "
                    f"inside the outer {BOUNDARY_STRIP:g} periods of the L={L} box")


@dataclass(frozen=True)
class DefectCorrector:
    L: int
    n: int
    chi_per: np.ndarray        # periodic corrector on the cell, (n, n)
    chi00: np.ndarray          # defect part on the closed box grid, (2Ln+1, 2Ln+1)
    annulus_energies: tuple    # ((R, energy of the annulus R-1 <= |x|_inf < R), ...)
    iterations: int = 0
    residual: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def grid(self):
        return box_grid(self.L, self.n)

    @property
    def chi0(self):
        """Full corrector ``chi_per + chi00`` on the box nodes."""
        return tile(self.chi_per, self.L) + self.chi00

    @property
    def total_energy(self):
        return float(sum(e for _, e in self.annulus_energies))

    @property
    def tail_fraction(self):
        """Share of the energy in the outer half of the annuli."""
        tot = self.total_energy
        tail = sum(e for R, e in self.annulus_energies if R > self.L / 2)
        return tail / tot if tot > 0 else 0.0

    def central_h1(self, half_width=2.0, other: "DefectCorrector" | None = None):
        """H1 norm of ``chi00`` (or of ``chi00 - other.chi00``) on ``[-a, a]^2``."""
        a = half_width
        W = self.chi00
        if other is not None:
            if other.n != self.n:
                raise ConfigurationError("central comparison needs equal resolution")
            W = self.chi00 - _embed(other, self.L)
        l2, g2 = fem.q1_norms(self.grid, W, region=((-a, a), (-a, a)))
        return math.sqrt(l2 + g2)


def _embed(dc: DefectCorrector, L):
    if dc.L > L:
        raise ConfigurationError("can only embed a smaller box")
    k = (L - dc.L) * dc.n
    out = np.zeros((2 * L * dc.n + 1,) * 2)
    out[k:k + dc.chi00.shape[0], k:k + dc.chi00.shape[1]] = dc.chi00
    return out


def element_energy(grid: fem.Grid, U, order=3):
    """Per-element ``int |grad u|^2 + u^2``, shape (m, m)."""
    e = np.zeros((grid.m, grid.m))
    for s, t, w in fem.quad_rule(order):
        val, gx, gy = fem.element_values(grid, U, s, t)
        e += w * (val * val + gx * gx + gy * gy)
    return e * grid.h**2


def annulus_energies(grid: fem.Grid, U, L):
    c = fem.quad_points(grid, 0.5, 0.5)
    r = np.maximum(np.abs(c[..., 0]), np.abs(c[..., 1]))
    band = np.minimum(np.floor(r).astype(int), L - 1)
    e = np.bincount(band.ravel(), weights=element_energy(grid, U).ravel(), minlength=L)
    return tuple((R + 1, float(e[R])) for R in range(L))


def defect_rhs(grid: fem.Grid, A0, V0, chi_per):
    """Weak form of ``div(A_0 grad chi_per + V_0)`` on the interior nodes."""
    a_zero = A0 is None or A0.is_zero
    v_zero = V0 is None or V0.is_zero
    if a_zero and v_zero:
        return np.zeros(int(fem.dof_map(grid).max()) + 1)

    def H(x):
        out = np.zeros(x.shape)
        if not a_zero:
            out += np.einsum("...ij,...j->...i", A0(x), periodic_q1_gradient(chi_per, x))
        if not v_zero:
            out += V0(x)
        return out

    return fem.div_load_vector(grid, H)


def solve_defect_part(A: CoefficientField, V: CoefficientField | None, chi_per, L, n,
                      *, tol=DEFECT_TOL) -> DefectCorrector:
    """Dirichlet-truncated defect part of the ``chi_0`` corrector on ``[-L, L]^2``."""
    L = int(L)
    U = chi_per.chi0 if isinstance(chi_per, CellSolution) else np.asarray(chi_per, dtype=float)
    if U.shape != (n, n):
        raise ConfigurationError(f"periodic corrector has shape {U.shape}, expected {(n, n)}")
    _check_support(A, V, L)
    grid = box_grid(L, n)
    A0 = A.decaying_part()
    V0 = None if V is None else V.decaying_part()
    b = defect_rhs(grid, A0, V0, U)
    if not np.any(b):
        w = np.zeros(grid.shape)
        return DefectCorrector(L, n, U, w, annulus_energies(grid, w, L), 0, 0.0,
                               {"rhs_norm": 0.0})
    K = fem.assemble(grid, A=A)
    x, rep = solve_spd(K, b, tol)
    w = fem.expand(grid, x)
    return DefectCorrector(L, n, U, w, annulus_energies(grid, w, L), rep.iterations,
                           rep.residual_norm, {"rhs_norm": float(np.linalg.norm(b))})


def full_residual(dc: DefectCorrector, A: CoefficientField, V: CoefficientField | None):
    """Relative interior residual of ``chi_per + chi00`` in the full box equation.

    Returns ``|K chi0 - F|_interior / |F|_interior`` with ``F = -int V . grad phi``.
    When ``V`` is (discretely) divergence free ``F`` is pure roundoff, so the
    denominator is floored at ``1e-3 sup|V| h sqrt(N)``, a small fraction of a generic load.
    """
    grid = dc.grid
    K = fem.assemble(grid, A=A, dirichlet=False)
    F = (fem.div_load_vector(grid, V, dirichlet=False) if V is not None and not V.is_zero
         else np.zeros(grid.n_nodes))
    r = K @ dc.chi0.ravel() - F
    interior = ~grid.boundary_mask().ravel()
    fn = np.linalg.norm(F[interior])
    res = np.linalg.norm(r[interior])
    vmax = 0.0 if V is None or V.is_zero else (V.alpha0 or 0.0)
    fn = max(fn, 1e-3 * vmax * grid.h * math.sqrt(interior.sum()))
    return float(res / fn) if fn > 0 else float(res)


@dataclass(frozen=True)
class DecayRow:
    R: int
    annulus_energy: float
    tail_energy: float
    seminorm_estimate: float


def decay_report(dc: DefectCorrector):
    """Per radius: annulus energy, energy outside ``[-R, R]^2`` and the mean-square estimate
    ``(|Q_R|^-1 int_{Q_R} chi00^2)^(1/2)``."""
    grid = dc.grid
    c = fem.quad_points(grid, 0.5, 0.5)
    r = np.maximum(np.abs(c[..., 0]), np.abs(c[..., 1]))
    band = np.minimum(np.floor(r).astype(int), dc.L - 1)
    mass = np.zeros((grid.m, grid.m))
    for s, t, w in fem.quad_rule(3):
        val, _, _ = fem.element_values(grid, dc.chi00, s, t)
        mass += w * val * val
    mass = np.bincount(band.ravel(), weights=(mass * grid.h**2).ravel(), minlength=dc.L)
    rows = []
    energies = [e for _, e in dc.annulus_energies]
    for k, (R, e) in enumerate(dc.annulus_energies):
        tail = float(sum(energies[k + 1:]))
        sq = float(mass[:k + 1].sum()) / (2.0 * R) ** 2
        rows.append(DecayRow(R, e, tail, math.sqrt(sq)))
    return rows


def decay_exponent(rows, start=None):
    """Least-squares slope of log(annulus energy) against log R over the outer half."""
    start = start if start is not None else max(1, len(rows) // 2)
    pts = [(r.R, r.annulus_energy) for r in rows[start:] if r.annulus_energy > 0]
    if len(pts) < 3:
        return float("nan")
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def decay_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["R", "annulus_energy", "tail_energy", "seminorm_estimate"])
    for r in rows:
        w.writerow([r.R, f"{r.annulus_energy:.12e}", f"{r.tail_energy:.12e}",
                    f"{r.seminorm_estimate:.12e}"])
    return buf.getvalue()
