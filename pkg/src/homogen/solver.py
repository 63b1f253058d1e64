"""Dirichlet problems on the unit square.

The oscillating operator is

    P_eps u = -div(A^eps grad u + V^eps u) + B^eps . grad u + a0^eps u + mu u

with coefficients sampled at ``x / eps``; the homogenized operator has the
same form with constant coefficients. Both are discretized with Q1 elements
on an ``m x m`` grid and homogeneous Dirichlet data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .cell import HomogenizedCoefficients
from .errors import ConfigurationError, HypothesisViolation, UnderResolutionError
from .fields import CoefficientField, as_function, sup_bound, validate_hypotheses
from .linalg import SparseMatrix, solve_general, solve_spd

MIN_CELLS_PER_PERIOD = 16


def compute_mu0(alpha, beta, alpha0):
    """Shift making the form coercive with constant ``alpha / 2`` on the gradient.

    Young's inequality absorbs the ``V`` and ``B`` terms into ``alpha / 4``
    each, leaving ``alpha0^2 / alpha`` apiece, and ``a0 >= -alpha0``.
    """
    if alpha <= 0:
        raise HypothesisViolation(f"alpha must be positive, got {alpha}")
    if alpha0 < 0:
        raise HypothesisViolation(f"alpha0 must be non-negative, got {alpha0}")
    return alpha0 + 2.0 * alpha0**2 / alpha


def stability_constant(alpha):
    """A-priori bound ``|u|_{H1} <= C |f|_{L2}`` on the unit square for ``mu >= mu0``.

    Coercivity ``alpha/2 |grad u|^2`` plus the Poincare constant ``1/(sqrt(2) pi)``.
    """
    poinc = 1.0 / (math.sqrt(2.0) * math.pi)
    return 2.0 * poinc / alpha * math.sqrt(1.0 + poinc**2)


def reference_resolution(eps, m_min=1024, cells_per_period=32):
    return int(max(m_min, math.ceil(cells_per_period / eps)))


@dataclass(frozen=True)
class DiscreteField:
    values: np.ndarray
    lo: tuple = (0.0, 0.0)
    length: float = 1.0
    boundary: str = "dirichlet"   # dirichlet | periodic | free
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.boundary not in ("dirichlet", "periodic", "free"):
            raise ConfigurationError(f"unknown boundary tag {self.boundary!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ConfigurationError("DiscreteField values must be a square nodal array")
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> fem.Grid:
        if self.boundary == "periodic":
            return fem.Grid(self.values.shape[0], tuple(self.lo), self.length, periodic=True)
        return fem.Grid(self.values.shape[0] - 1, tuple(self.lo), self.length)

    @property
    def m(self):
        return self.grid.m

    @property
    def h(self):
        return self.grid.h

    def norms(self, region=None):
        l2, g2 = fem.q1_norms(self.grid, self.values, region=region)
        return math.sqrt(l2), math.sqrt(g2)

    def h1_norm(self, region=None):
        l2, g2 = self.norms(region)
        return math.sqrt(l2**2 + g2**2)

    def save(self, stem):
        """JSON header ``stem.json`` plus raw little-endian float64 ``stem.f64`` (row-major)."""
        stem = Path(stem)
        raw = stem.with_suffix(".f64")
        self.values.astype("<f8").tofile(raw)
        header = {"shape": list(self.values.shape), "dtype": "<f8", "order": "C",
                  "lo": list(self.lo), "length": self.length, "boundary": self.boundary,
                  "data": raw.name, "meta": _jsonable(self.meta)}
        stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        header = json.loads(stem.with_suffix(".json").read_text())
        vals = np.fromfile(stem.parent / header["data"], dtype="<f8").reshape(header["shape"])
        return cls(vals, tuple(header["lo"]), header["length"], header["boundary"],
                   header.get("meta", {}))


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        if isinstance(v, (str, int, float, bool, list, type(None))):
            out[k] = v
    return out


@dataclass(frozen=True)
class ProblemSpec:
    A: CoefficientField
    V: CoefficientField | None = None
    B: CoefficientField | None = None
    a0: CoefficientField | None = None
    mu: float = 0.0
    f: object = 1.0

    @property
    def alpha0(self):
        return sup_bound([self.V, self.B, self.a0])

    @property
    def mu0(self):
        return compute_mu0(self.A.alpha, self.A.beta, self.alpha0)

    @property
    def mu_eff(self):
        return max(self.mu0, float(self.mu))

    @property
    def symmetric(self):
        return _same(self.V, self.B)

    def validate(self, lattice_n=16, probes=8):
        if self.A.alpha is None or self.A.beta is None:
            raise ConfigurationError("A must declare alpha and beta")
        reports = [validate_hypotheses(self.A, lattice_n, probes)]
        for c in (self.V, self.B, self.a0):
            if c is not None:
                reports.append(validate_hypotheses(c, lattice_n, probes))
        return reports


def _same(a, b):
    za = a is None or a.is_zero
    zb = b is None or b.is_zero
    if za or zb:
        return za and zb
    return a.to_json() == b.to_json()


def _scaled(c, eps):
    if c is None or c.is_zero:
        return None
    if eps == 1.0:
        return c
    return lambda x: c(x / eps)


def check_resolution(eps, m):
    if m * eps < MIN_CELLS_PER_PERIOD:
        need = int(math.ceil(MIN_CELLS_PER_PERIOD / eps))
        raise UnderResolutionError(
            f"m={m} gives {m * eps:g} cells per period at eps={eps:g}; need m >= {need}",
            required_m=need)


def unit_grid(m):
    fem.check_grid(m)
    return fem.Grid(m)


def assemble_dirichlet(spec: ProblemSpec, eps, m, *, mu=None):
    """Matrix and load vector on interior nodes of the ``m x m`` grid."""
    check_resolution(eps, m)
    grid = unit_grid(m)
    mu = spec.mu_eff if mu is None else mu
    a0 = _scaled(spec.a0, eps)
    if a0 is None:
        c = mu if mu != 0 else None
    else:
        c = lambda x: a0(x) + mu  # noqa: E731
    K = fem.assemble(grid, A=_scaled(spec.A, eps), V=_scaled(spec.V, eps),
                     B=_scaled(spec.B, eps), c=c)
    rhs = fem.load_vector(grid, as_function(spec.f))
    return K, rhs


def adjoint_matrix(spec: ProblemSpec, eps, m):
    """Matrix of the formal adjoint (V and B swapped)."""
    swapped = ProblemSpec(spec.A, spec.B, spec.V, spec.a0, spec.mu, spec.f)
    return assemble_dirichlet(swapped, eps, m, mu=spec.mu_eff)[0]


def _solve(K: SparseMatrix, rhs, tol, method):
    if method == "auto":
        method = "cg" if K.symmetric else "lu"
    if method == "cg":
        return solve_spd(K, rhs, tol)
    return solve_general(K, rhs)


def f_norm(f, m=256):
    g = unit_grid(m)
    fn = as_function(f)
    return math.sqrt(fem.integrate(g, lambda s, t, x: fn(x) ** 2))


def solve_oscillating(spec: ProblemSpec, eps, m, *, tol=1e-10, method="auto") -> DiscreteField:
    K, rhs = assemble_dirichlet(spec, eps, m)
    x, rep = _solve(K, rhs, tol, method)
    grid = unit_grid(m)
    u = DiscreteField(fem.expand(grid, x))
    fl2 = f_norm(spec.f)
    h1 = u.h1_norm()
    C = stability_constant(spec.A.alpha)
    u.meta.update(eps=eps, m=m, mu=spec.mu_eff, method=rep.method, iterations=rep.iterations,
                  residual=rep.residual_norm, norm_h1=h1, f_l2=fl2, stability_constant=C,
                  stability_ratio=h1 / fl2 if fl2 else 0.0, stable=bool(h1 <= C * fl2 * (1 + 1e-6)))
    return u


def homogenized_spec(coeffs: HomogenizedCoefficients, f) -> ProblemSpec:
    from .fields import constant

    A = np.asarray(coeffs.A_hat, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    if ev.min() <= 0:
        raise HypothesisViolation(f"homogenized matrix is not positive definite: {ev}")
    Af = constant(0.5 * (A + A.T), "matrix2", alpha=float(ev.min()), beta=float(ev.max()))
    V = constant(coeffs.V_hat, "vector2", alpha0=float(np.linalg.norm(coeffs.V_hat)))
    B = constant(coeffs.B_hat, "vector2", alpha0=float(np.linalg.norm(coeffs.B_hat)))
    a0 = constant(coeffs.a0_hat, "scalar", alpha0=abs(float(coeffs.a0_hat)))
    return ProblemSpec(Af, V, B, a0, coeffs.mu, f)


def solve_homogenized(coeffs: HomogenizedCoefficients, f, m, *, tol=1e-10,
                      method="auto") -> DiscreteField:
    """Constant-coefficient solve; ``mu`` is used exactly as stored in ``coeffs``."""
    spec = homogenized_spec(coeffs, f)
    grid = unit_grid(m)
    K, rhs = assemble_dirichlet(spec, 1.0, m, mu=coeffs.mu)
    x, rep = _solve(K, rhs, tol, method)
    u = DiscreteField(fem.expand(grid, x))
    u.meta.update(m=m, method=rep.method, iterations=rep.iterations, residual=rep.residual_norm,
                  norm_h2=h2_surrogate(u))
    return u


def h2_surrogate(u: DiscreteField):
    """``|u|_{H2}`` from second differences at interior nodes plus the Q1 H1 part."""
    U, h = u.values, u.h
    d11 = (U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / h**2
    d22 = (U[1:-1, 2:] - 2 * U[1:-1, 1:-1] + U[1:-1, :-2]) / h**2
    d12 = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4 * h**2)
    second = h**2 * float(np.sum(d11**2 + 2 * d12**2 + d22**2))
    l2, g = u.norms()
    return math.sqrt(l2**2 + g**2 + second)
