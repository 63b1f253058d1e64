"""Closed-form coefficient fields on the plane.

A field is a finite sum of terms. Trig terms are products of ``cos`` / ``sin``
factors of ``2*pi*(w . y)``; integer frequency vectors ``w`` give period-1
functions. Gaussian terms ``amplitude * exp(-|y - c|^2 / sigma^2)`` model
localized defects. Every term is attached to an *entry* of the field:

* matrix fields: ``"I"`` (scalar times identity) or ``(i, j)``; off-diagonal
  entries are written symmetrically, so matrix fields are symmetric by
  construction,
* vector fields: ``(i,)``,
* scalar fields: ``None``.

Fields evaluate on arrays of points with trailing axis of length 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, HypothesisViolation

KINDS = ("matrix2", "vector2", "scalar")
STRUCTURES = ("constant", "periodic", "periodic_plus_decaying", "almost_periodic")
_FUNCS = {"cos": np.cos, "sin": np.sin}


@dataclass(frozen=True)
class TrigTerm:
    coef: float
    factors: tuple = ()  # ((name, (w1, w2)), ...)
    entry: object = None

    def value(self, y):
        out = np.full(y.shape[:-1], float(self.coef))
        for name, (w1, w2) in self.factors:
            out = out * _FUNCS[name](2.0 * np.pi * (w1 * y[..., 0] + w2 * y[..., 1]))
        return out

    def is_constant(self):
        return all(w1 == 0 and w2 == 0 for _, (w1, w2) in self.factors)

    def is_periodic(self):
        return all(float(w).is_integer() for _, ws in self.factors for w in ws)

    def to_json(self):
        d = {"type": "trig", "coef": self.coef,
             "factors": [[name, list(w)] for name, w in self.factors]}
        if self.entry is not None:
            d["entry"] = self.entry if self.entry == "I" else list(self.entry)
        return d


@dataclass(frozen=True)
class GaussianTerm:
    amplitude: float
    center: tuple = (0.0, 0.0)
    sigma: float = 1.0
    entry: object = None

    def value(self, y):
        d2 = (y[..., 0] - self.center[0]) ** 2 + (y[..., 1] - self.center[1]) ** 2
        return self.amplitude * np.exp(-d2 / self.sigma**2)

    def to_json(self):
        d = {"type": "gaussian", "amplitude": self.amplitude,
             "center": list(self.center), "sigma": self.sigma}
        if self.entry is not None:
            d["entry"] = self.entry if self.entry == "I" else list(self.entry)
        return d


def _norm_entry(kind, entry):
    if kind == "scalar":
        if entry is not None:
            raise ConfigurationError("scalar field terms take no entry")
        return None
    if kind == "matrix2":
        if entry is None or entry == "I":
            return "I"
        i, j = (int(e) for e in entry)
        if not (0 <= i < 2 and 0 <= j < 2):
            raise ConfigurationError(f"matrix entry out of range: {entry}")
        return (min(i, j), max(i, j))
    if isinstance(entry, (int, np.integer)):
        entry = (entry,)
    if entry is None or len(entry) != 1 or not 0 <= int(entry[0]) < 2:
        raise ConfigurationError(f"vector entry must be (0,) or (1,), got {entry}")
    return (int(entry[0]),)


def _infer_structure(terms):
    gauss = any(isinstance(t, GaussianTerm) for t in terms)
    trig = [t for t in terms if isinstance(t, TrigTerm)]
    if not all(t.is_periodic() for t in trig):
        return "almost_periodic"
    if gauss:
        return "periodic_plus_decaying"
    if all(t.is_constant() for t in trig):
        return "constant"
    return "periodic"


@dataclass(frozen=True)
class CoefficientField:
    kind: str
    terms: tuple = ()
    structure: str | None = None
    alpha: float | None = None
    beta: float | None = None
    alpha0: float | None = None
    name: str = dc_field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        terms = tuple(replace(t, entry=_norm_entry(self.kind, t.entry)) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        inferred = _infer_structure(terms)
        if self.structure is None:
            object.__setattr__(self, "structure", inferred)
        elif self.structure not in STRUCTURES:
            raise ConfigurationError(f"unknown structure {self.structure!r}")
        elif not _structure_compatible(self.structure, inferred):
            raise ConfigurationError(
                f"declared structure {self.structure!r} does not match terms ({inferred})")
        if self.kind == "matrix2" and self.alpha is not None and self.alpha <= 0:
            raise HypothesisViolation(f"alpha must be positive, got {self.alpha}")

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != 2:
            raise ConfigurationError("points must have a trailing axis of length 2")
        base = y.shape[:-1]
        if self.kind == "matrix2":
            out = np.zeros(base + (2, 2))
        elif self.kind == "vector2":
            out = np.zeros(base + (2,))
        else:
            out = np.zeros(base)
        for t in self.terms:
            s = t.value(y)
            e = t.entry
            if e is None:
                out += s
            elif e == "I":
                out[..., 0, 0] += s
                out[..., 1, 1] += s
            elif len(e) == 2:
                out[..., e[0], e[1]] += s
                if e[0] != e[1]:
                    out[..., e[1], e[0]] += s
            else:
                out[..., e[0]] += s
        return out

    def eval(self, y, role=None):
        if role is not None and role != self.kind:
            raise ConfigurationError(f"{self.name or 'field'} is {self.kind}, requested as {role}")
        return self(y)

    @property
    def is_zero(self):
        return all((t.coef if isinstance(t, TrigTerm) else t.amplitude) == 0 for t in self.terms)

    @property
    def gaussians(self):
        return tuple(t for t in self.terms if isinstance(t, GaussianTerm))

    def periodic_part(self):
        terms = tuple(t for t in self.terms if isinstance(t, TrigTerm))
        return replace(self, terms=terms, structure=_infer_structure(terms))

    def decaying_part(self):
        terms = self.gaussians
        return replace(self, terms=terms, structure=_infer_structure(terms) if terms else "constant")

    def column(self, j):
        """The vector field ``A e_j`` of a matrix field."""
        if self.kind != "matrix2":
            raise ConfigurationError("column() needs a matrix field")
        terms = []
        for t in self.terms:
            e = t.entry
            if e == "I":
                terms.append(replace(t, entry=(j,)))
            elif e[1] == j:
                terms.append(replace(t, entry=(e[0],)))
            elif e[0] == j:
                terms.append(replace(t, entry=(e[1],)))
        return CoefficientField("vector2", tuple(terms), self.structure,
                                alpha0=self.beta, name=f"{self.name}e{j + 1}")

    def to_json(self):
        d = {"kind": self.kind, "structure": self.structure,
             "terms": [t.to_json() for t in self.terms]}
        for key in ("alpha", "beta", "alpha0"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d

    @classmethod
    def from_json(cls, d, name=""):
        allowed = {"kind", "structure", "terms", "alpha", "beta", "alpha0"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigurationError(f"unknown field keys: {sorted(unknown)}")
        terms = []
        for t in d.get("terms", []):
            t = dict(t)
            typ = t.pop("type", None)
            entry = t.pop("entry", None)
            if isinstance(entry, list):
                entry = tuple(entry)
            if typ == "trig":
                factors = tuple((f[0], (float(f[1][0]), float(f[1][1]))) for f in t.pop("factors", []))
                if any(f[0] not in _FUNCS for f in factors):
                    raise ConfigurationError(f"trig factors must be cos/sin: {factors}")
                terms.append(TrigTerm(float(t.pop("coef")), factors, entry))
            elif typ == "gaussian":
                terms.append(GaussianTerm(float(t.pop("amplitude")), tuple(t.pop("center", (0.0, 0.0))),
                                          float(t.pop("sigma", 1.0)), entry))
            else:
                raise ConfigurationError(f"unknown term type {typ!r}")
            if t:
                raise ConfigurationError(f"unknown term keys: {sorted(t)}")
        return cls(d["kind"], tuple(terms), d.get("structure"), d.get("alpha"), d.get("beta"),
                   d.get("alpha0"), name=name)


def _structure_compatible(declared, inferred):
    # a declared class may be wider than what the terms need
    wider = {"constant": {"periodic", "periodic_plus_decaying"},
             "periodic": {"periodic_plus_decaying"}}
    return (declared == inferred or declared == "almost_periodic"
            or declared in wider.get(inferred, ()))


def zero(kind):
    return CoefficientField(kind, (), "constant", alpha0=0.0)


def constant(value, kind=None, **bounds):
    """Constant field from a scalar, a 2-vector or a symmetric 2x2 matrix."""
    a = np.asarray(value, dtype=float)
    if kind is None:
        kind = {0: "scalar", 1: "vector2", 2: "matrix2"}[a.ndim]
    if kind == "scalar":
        terms = (TrigTerm(float(a)),)
    elif kind == "vector2":
        terms = tuple(TrigTerm(float(a[i]), (), (i,)) for i in range(2) if a[i] != 0)
    else:
        if a.ndim == 0:
            terms = (TrigTerm(float(a), (), "I"),)
        else:
            terms = tuple(TrigTerm(float(a[i, j]), (), (i, j))
                          for i in range(2) for j in range(i, 2) if a[i, j] != 0)
    return CoefficientField(kind, terms, "constant", **bounds)


def identity(**bounds):
    bounds.setdefault("alpha", 1.0)
    bounds.setdefault("beta", 1.0)
    return CoefficientField("matrix2", (TrigTerm(1.0, (), "I"),), "constant", **bounds, name="I")


def laminate(mean=2.0, amp=1.0):
    """``(mean + amp cos 2 pi y1) I``; effective tensor diag(harmonic, arithmetic mean)."""
    return CoefficientField(
        "matrix2", (TrigTerm(mean, (), "I"), TrigTerm(amp, (("cos", (1.0, 0.0)),), "I")),
        "periodic", alpha=mean - abs(amp), beta=mean + abs(amp), name="laminate")


def checkerboard(mean=2.0, amp=1.0):
    """``(mean + amp cos 2 pi y1 cos 2 pi y2) I``, a genuinely two-dimensional cell."""
    return CoefficientField(
        "matrix2",
        (TrigTerm(mean, (), "I"), TrigTerm(amp, (("cos", (1.0, 0.0)), ("cos", (0.0, 1.0))), "I")),
        "periodic", alpha=mean - abs(amp), beta=mean + abs(amp), name="checkerboard")


def gaussian_defect(base: CoefficientField, amplitude, sigma, center=(0.0, 0.0)):
    """Add a localized bump to ``base``; bounds are widened to stay valid."""
    entry = "I" if base.kind == "matrix2" else ((0,) if base.kind == "vector2" else None)
    bump = GaussianTerm(float(amplitude), tuple(center), float(sigma), entry)
    kw = {}
    if base.kind == "matrix2":
        kw = dict(alpha=base.alpha + min(amplitude, 0.0), beta=base.beta + max(amplitude, 0.0))
    elif base.alpha0 is not None:
        kw = dict(alpha0=base.alpha0 + abs(amplitude))
    structure = "almost_periodic" if base.structure == "almost_periodic" else "periodic_plus_decaying"
    return replace(base, terms=base.terms + (bump,), structure=structure, **kw)


def almost_periodic_example():
    """``cos 2 pi y1 + cos 2 sqrt(2) pi y1``."""
    return CoefficientField(
        "scalar", (TrigTerm(1.0, (("cos", (1.0, 0.0)),)),
                   TrigTerm(1.0, (("cos", (math.sqrt(2.0), 0.0)),))),
        "almost_periodic", alpha0=2.0, name="ap")


def trig(coef, *factors, entry=None):
    """Shorthand: ``trig(0.5, ("sin", (0, 1)))``."""
    return TrigTerm(float(coef), tuple((f, (float(w[0]), float(w[1]))) for f, w in factors), entry)


# --------------------------------------------------------------------------
# hypotheses

@dataclass(frozen=True)
class ValidationReport:
    kind: str
    n_samples: int
    min_rayleigh: float | None
    max_rayleigh: float | None
    max_asymmetry: float | None
    sup_norm: float | None
    alpha_ok: bool
    beta_ok: bool
    alpha0_ok: bool
    symmetric: bool
    worst_point: tuple | None = None

    @property
    def passed(self):
        return self.alpha_ok and self.beta_ok and self.alpha0_ok and self.symmetric


def _sample_points(field: CoefficientField, lattice_n):
    g = (np.arange(lattice_n) + 0.0) / lattice_n
    cell = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = [cell]
    if field.structure == "almost_periodic":
        # no period to exploit: sweep a wider window
        w = np.arange(8 * lattice_n) / lattice_n
        pts.append(np.stack(np.meshgrid(w, w, indexing="ij"), axis=-1).reshape(-1, 2))
    for t in field.gaussians:
        s = np.linspace(-3 * t.sigma, 3 * t.sigma, 2 * lattice_n + 1)
        local = np.stack(np.meshgrid(s + t.center[0], s + t.center[1], indexing="ij"), axis=-1)
        pts.append(local.reshape(-1, 2))
    return np.concatenate(pts)


def probe_directions(probes):
    ang = np.pi * np.arange(probes) / probes
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def validate_hypotheses(field: CoefficientField, lattice_n=16, probes=8, raise_on_violation=True,
                        rtol=1e-12):
    if lattice_n < 8:
        raise ConfigurationError("lattice_n must be at least 8")
    if probes < 4:
        raise ConfigurationError("need at least 4 probe directions")
    pts = _sample_points(field, lattice_n)
    vals = field(pts)
    worst = None
    if field.kind == "matrix2":
        xi = probe_directions(probes)
        rq = np.einsum("pi,nij,pj->np", xi, vals, xi)
        lo, hi = rq.min(), rq.max()
        asym = float(np.abs(vals[:, 0, 1] - vals[:, 1, 0]).max())
        alpha, beta = field.alpha, field.beta
        alpha_ok = alpha is None or lo >= alpha * (1 - rtol) - rtol
        beta_ok = beta is None or hi <= beta * (1 + rtol) + rtol
        if not alpha_ok:
            worst = tuple(pts[np.unravel_index(rq.argmin(), rq.shape)[0]])
        elif not beta_ok:
            worst = tuple(pts[np.unravel_index(rq.argmax(), rq.shape)[0]])
        rep = ValidationReport(field.kind, len(pts), float(lo), float(hi), asym, None,
                               bool(alpha_ok), bool(beta_ok), True, asym == 0.0,
                               None if worst is None else tuple(map(float, worst)))
    else:
        mag = np.abs(vals) if field.kind == "scalar" else np.linalg.norm(vals, axis=-1)
        sup = float(mag.max()) if mag.size else 0.0
        a0 = field.alpha0
        ok = a0 is None or sup <= a0 * (1 + rtol) + rtol
        if not ok:
            worst = tuple(map(float, pts[mag.argmax()]))
        rep = ValidationReport(field.kind, len(pts), None, None, None, sup,
                               True, True, bool(ok), True, worst)
    if raise_on_violation and not rep.passed:
        what = ("alpha" if not rep.alpha_ok else "beta" if not rep.beta_ok
                else "alpha0" if not rep.alpha0_ok else "symmetry")
        raise HypothesisViolation(
            f"{field.name or field.kind} violates declared {what} bound at y={rep.worst_point}",
            point=rep.worst_point)
    return rep


# --------------------------------------------------------------------------
# mean values

@dataclass(frozen=True)
class MeanValueEstimate:
    value: float
    radii: tuple
    partials: tuple
    converged: bool


def cell_average(func: Callable, n=256):
    """Midpoint rule over the unit cell."""
    g = (np.arange(n) + 0.5) / n
    y = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    return float(np.mean(func(y)))


def square_average(func: Callable, radius, points_per_unit=16, chunk=1 << 21):
    """Midpoint-rule average of ``func`` over ``[-R, R]^2``."""
    n = max(1, int(round(2 * radius * points_per_unit)))
    g = -radius + (np.arange(n) + 0.5) * (2 * radius / n)
    rows = max(1, chunk // n)
    total = 0.0
    for start in range(0, n, rows):
        y = np.stack(np.meshgrid(g[start:start + rows], g, indexing="ij"), axis=-1)
        total += float(np.sum(func(y)))
    return total / (n * n)


def mean_value(field, r_max=64.0, levels=4, *, shortcut=True, points_per_unit=16, n_cell=256,
               tol=1e-3, structure=None):
    """Estimate the mean value of a scalar field over growing squares.

    ``field`` may also be a bare callable, in which case ``structure`` says how
    to treat it.
    """
    if isinstance(field, CoefficientField):
        if field.kind != "scalar":
            raise ConfigurationError("mean_value needs a scalar field")
        structure = structure or field.structure
    if r_max < 4 or levels < 3:
        raise ConfigurationError("mean_value needs r_max >= 4 and levels >= 3")
    if shortcut and structure in ("constant", "periodic"):
        v = cell_average(field, n_cell)
        return MeanValueEstimate(v, (0.5,), (v,), True)
    radii = tuple(r_max / 2 ** (levels - 1 - k) for k in range(levels))
    partials = tuple(square_average(field, r, points_per_unit) for r in radii)
    converged = abs(partials[-1] - partials[-2]) <= tol
    return MeanValueEstimate(partials[-1], radii, partials, bool(converged))


def besicovitch_seminorm(field, r_max=64.0, levels=4, **kw):
    structure = kw.pop("structure", None)
    if isinstance(field, CoefficientField):
        structure = structure or field.structure
    est = mean_value(lambda y: field(y) ** 2, r_max, levels, structure=structure, **kw)
    return math.sqrt(max(est.value, 0.0))


def as_function(f) -> Callable:
    """Accept a CoefficientField, a callable or a constant as a source term."""
    if isinstance(f, CoefficientField) or callable(f):
        return f
    c = float(f)
    return lambda y: np.full(np.shape(y)[:-1], c)


def sup_bound(fields: Sequence[CoefficientField]):
    """Common alpha0 over lower-order coefficients (declared bounds, zero fields skipped)."""
    vals = [f.alpha0 for f in fields if f is not None and not f.is_zero]
    if any(v is None for v in vals):
        raise ConfigurationError("lower-order coefficients must declare alpha0")
    return max(vals, default=0.0)
