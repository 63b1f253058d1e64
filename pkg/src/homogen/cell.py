"""Periodic cell problems and homogenized coefficients.

Correctors are zero-mean Q1 functions on the periodic unit cell solving

    -div(A grad chi_j) = div(A e_j),     -div(A grad chi_0) = div V,

and the effective coefficients are cell averages taken with the same 2x2
Gauss rule that assembles the stiffness matrix.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .errors import ConfigurationError
from .fields import CoefficientField, validate_hypotheses
from .linalg import SparseMatrix, project_zero_mean, solve_spd

CELL_TOL = 1e-12


def PeriodicGrid(n: int) -> fem.Grid:
    fem.check_grid(n, periodic=True)
    return fem.Grid(n, periodic=True)


def field_digest(f: CoefficientField | None) -> str:
    if f is None:
        return ""
    blob = json.dumps(f.to_json(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class CellSolution:
    grid: fem.Grid
    chi: np.ndarray   # (2, n, n)
    chi0: np.ndarray  # (n, n)
    a_digest: str = ""
    iterations: tuple = field(default=(), compare=False)

    @property
    def n(self):
        return self.grid.m

    @property
    def c_check(self):
        """Recorded sup-norm bound over all correctors."""
        return float(max(np.abs(self.chi).max(), np.abs(self.chi0).max()))

    def gradients(self, s, t):
        """Gradients of chi_1, chi_2, chi_0 at reference point ``(s, t)``: array (3, 2, n, n)."""
        out = []
        for u in (self.chi[0], self.chi[1], self.chi0):
            _, gx, gy = fem.element_values(self.grid, u, s, t)
            out.append(np.stack([gx, gy]))
        return np.stack(out)

    def means(self):
        return [float(self.chi[0].mean()), float(self.chi[1].mean()), float(self.chi0.mean())]

    def gradient_means(self):
        g = sum(w * self.gradients(s, t) for s, t, w in fem.quad_rule(2))
        return g.mean(axis=(-2, -1))  # (3, 2)

    def to_json(self):
        return {"n": self.n, "a_digest": self.a_digest,
                "chi1": self.chi[0].tolist(), "chi2": self.chi[1].tolist(),
                "chi0": self.chi0.tolist()}

    @classmethod
    def from_json(cls, d):
        chi = np.array([d["chi1"], d["chi2"]], dtype=float)
        return cls(PeriodicGrid(int(d["n"])), chi, np.array(d["chi0"], dtype=float),
                   d.get("a_digest", ""))


@dataclass(frozen=True)
class HomogenizedCoefficients:
    A_hat: np.ndarray
    B_hat: np.ndarray
    V_hat: np.ndarray
    a0_hat: float
    mu: float

    def to_json(self):
        return {"A_hat": np.asarray(self.A_hat).tolist(), "B_hat": np.asarray(self.B_hat).tolist(),
                "V_hat": np.asarray(self.V_hat).tolist(), "a0_hat": float(self.a0_hat),
                "mu": float(self.mu)}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["A_hat"], dtype=float), np.array(d["B_hat"], dtype=float),
                   np.array(d["V_hat"], dtype=float), float(d["a0_hat"]), float(d["mu"]))


def assemble_cell_stiffness(A: CoefficientField, grid: fem.Grid, *, validate=True) -> SparseMatrix:
    if A.kind != "matrix2":
        raise ConfigurationError("cell stiffness needs a matrix field")
    if validate:
        validate_hypotheses(A, 16, 8)
    return fem.assemble(grid, A=A, dirichlet=False)


def _as_vector_field(H):
    if isinstance(H, CoefficientField) and H.kind != "vector2":
        raise ConfigurationError("right-hand side flux must be a vector field")
    return H


def solve_cell_general(A, H, grid, *, tol=CELL_TOL, x0=None, K=None, return_report=False):
    """Zero-mean periodic solution of ``-div(A grad u) = div H``."""
    H = _as_vector_field(H)
    K = K if K is not None else assemble_cell_stiffness(A, grid)
    b = fem.div_load_vector(grid, H, dirichlet=False)
    x, rep = solve_spd(K, b, tol, x0=None if x0 is None else np.ravel(x0), zero_mean=True)
    u = project_zero_mean(x).reshape(grid.shape)
    return (u, rep) if return_report else u


def solve_cell_regularized(A, H, grid, T, *, tol=CELL_TOL):
    """Periodic solution of ``-div(A grad u) + u / T^2 = div H`` (SPD, no nullspace)."""
    if T <= 0:
        raise ConfigurationError("T must be positive")
    H = _as_vector_field(H)
    if A.kind != "matrix2":
        raise ConfigurationError("cell stiffness needs a matrix field")
    validate_hypotheses(A, 16, 8)
    K = fem.assemble(grid, A=A, c=T**-2.0, dirichlet=False)
    b = fem.div_load_vector(grid, H, dirichlet=False)
    x, _ = solve_spd(K, b, tol)
    return x.reshape(grid.shape)


def solve_correctors(A, V=None, grid=None, *, n=None, tol=CELL_TOL, threads=1) -> CellSolution:
    grid = grid if grid is not None else PeriodicGrid(n)
    K = assemble_cell_stiffness(A, grid)
    rhs = [A.column(0), A.column(1), V]

    def one(H):
        if H is None or (isinstance(H, CoefficientField) and H.is_zero):
            return np.zeros(grid.shape), 0
        u, rep = solve_cell_general(A, H, grid, tol=tol, K=K, return_report=True)
        return u, rep.iterations

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(one, rhs))
    else:
        res = [one(H) for H in rhs]
    chi = np.stack([res[0][0], res[1][0]])
    return CellSolution(grid, chi, res[2][0], field_digest(A), tuple(r[1] for r in res))


def _cell_quadrature(grid):
    for s, t, w in fem.quad_rule(2):
        yield s, t, w, fem.quad_points(grid, s, t)


def homogenized_coefficients(A, V, B, a0, mu, sol: CellSolution) -> HomogenizedCoefficients:
    if sol.a_digest and sol.a_digest != field_digest(A):
        raise ConfigurationError("cell solution was computed for a different A")
    grid = sol.grid
    A_hat = np.zeros((2, 2))
    B_hat = np.zeros(2)
    V_hat = np.zeros(2)
    a0_hat = 0.0
    for s, t, w, y in _cell_quadrature(grid):
        g = sol.gradients(s, t)            # (3, k, n, n): corrector, d/dy_k
        a = np.moveaxis(A(y), (-2, -1), (0, 1))   # (2, 2, n, n)
        # (I + grad chi)_{kj} = delta_kj + d chi_j / d y_k
        D = np.eye(2)[:, :, None, None] + np.moveaxis(g[:2], 0, 1)
        A_hat += w * np.einsum("ikxy,kjxy->ij", a, D) / grid.m**2
        V_hat += w * np.einsum("ikxy,kxy->i", a, g[2]) / grid.m**2
        if V is not None:
            V_hat += w * np.moveaxis(V(y), -1, 0).mean(axis=(-2, -1))
        if B is not None:
            b = np.moveaxis(B(y), -1, 0)
            B_hat += w * np.einsum("kxy,kjxy->j", b, D) / grid.m**2
            a0_hat += w * float(np.einsum("kxy,kxy->", b, g[2])) / grid.m**2
        if a0 is not None:
            a0_hat += w * float(np.mean(a0(y)))
    return HomogenizedCoefficients(A_hat, B_hat, V_hat, a0_hat, float(mu))


def cell_bounds(A, grid):
    """Arithmetic (Voigt) and harmonic (Reuss) averages of ``A`` with the assembly rule."""
    voigt = np.zeros((2, 2))
    inv = np.zeros((2, 2))
    for s, t, w, y in _cell_quadrature(grid):
        a = A(y)
        voigt += w * a.mean(axis=(0, 1))
        inv += w * np.linalg.inv(a).mean(axis=(0, 1))
    return voigt, np.linalg.inv(inv)


def corrector_energy(A, sol: CellSolution, xi):
    """``< A (xi + grad chi_xi) . (xi + grad chi_xi) >`` with ``chi_xi = xi_1 chi_1 + xi_2 chi_2``."""
    xi = np.asarray(xi, dtype=float)
    total = 0.0
    for s, t, w, y in _cell_quadrature(sol.grid):
        g = sol.gradients(s, t)
        e = xi[:, None, None] + xi[0] * g[0] + xi[1] * g[1]
        total += w * float(np.einsum("xyij,ixy,jxy->", A(y), e, e)) / sol.grid.m**2
    return total


def cell_h1_seminorm(grid, U):
    return float(np.sqrt(fem.q1_norms(grid, U, order=2)[1]))
