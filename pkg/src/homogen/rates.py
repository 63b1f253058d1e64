"""Error norms, epsilon sweeps and log-log slope fits."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fem
from .approx import boundary_layer_indicator, first_order_approx
from .cell import homogenized_coefficients, solve_correctors
from .errors import (ConfigurationError, DegenerateFitError, HomogenError,
                     InsufficientDataError)
from .solver import (DiscreteField, ProblemSpec, f_norm, reference_resolution,
                     solve_homogenized, solve_oscillating, stability_constant)

log = logging.getLogger(__name__)

INTERIOR = ((0.25, 0.75), (0.25, 0.75))


# --------------------------------------------------------------------------
# norms

def _refine(coarse: DiscreteField, fine: DiscreteField):
    """Q1 interpolant of ``coarse`` sampled at the nodes of ``fine``."""
    if tuple(map(float, coarse.lo)) != tuple(map(float, fine.lo)) or coarse.length != fine.length:
        raise ConfigurationError("fields live on different domains")
    mc, mf = coarse.m, fine.m
    if mf == mc:
        return coarse.values
    z = np.linspace(0.0, mc, mf + 1)
    i = np.minimum(np.floor(z).astype(int), mc - 1)
    s = z - i
    U = coarse.values
    a = (1 - s)[:, None] * U[i, :] + s[:, None] * U[i + 1, :]
    return a[:, i] * (1 - s)[None, :] + a[:, i + 1] * s[None, :]


def _pair(u, v):
    """Put two fields on the finer of the two grids."""
    if u.m >= v.m:
        return u, _refine(v, u)
    return v, _refine(u, v)


def error_L2(u: DiscreteField, v, region=None):
    """``|u - v|_{L2}``; ``v`` may be a field or a closed-form callable (exact at quadrature points)."""
    if callable(v) and not isinstance(v, DiscreteField):
        g = u.grid

        def sq(s, t, x):
            val, _, _ = fem.element_values(g, u.values, s, t)
            return (val - v(x)) ** 2

        if region is not None:
            raise ConfigurationError("region is only supported for field arguments")
        return math.sqrt(fem.integrate(g, sq))
    base, other = _pair(u, v)
    diff = DiscreteField(base.values - other, base.lo, base.length, "free")
    return diff.norms(region)[0]


def error_H1(u: DiscreteField, v, region=None):
    """Full H1 norm of ``u - v``; a callable ``v`` is sampled at the nodes of ``u``."""
    if callable(v) and not isinstance(v, DiscreteField):
        v = DiscreteField(v(u.grid.node_coords()), u.lo, u.length, "free")
    base, other = _pair(u, v)
    diff = DiscreteField(base.values - other, base.lo, base.length, "free")
    return diff.h1_norm(region)


# --------------------------------------------------------------------------
# fits

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    prefactor: float
    r_squared: float

    def __iter__(self):
        return iter((self.slope, self.prefactor, self.r_squared))


def fit_slope(points) -> SlopeFit:
    """Least squares ``log err = slope log eps + log C``."""
    pts = list(points)
    if len(pts) < 3:
        raise InsufficientDataError(f"slope fit needs at least 3 points, got {len(pts)}")
    eps = np.array([p[0] for p in pts], dtype=float)
    err = np.array([p[1] for p in pts], dtype=float)
    if np.any(~np.isfinite(err)) or np.any(err <= 0) or np.any(eps <= 0):
        raise DegenerateFitError("slope fit needs positive finite errors")
    x, y = np.log(eps), np.log(err)
    if np.ptp(x) == 0:
        raise DegenerateFitError("all eps values coincide")
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / ss if ss > 0 else 1.0
    return SlopeFit(float(slope), float(math.exp(icpt)), r2)


# --------------------------------------------------------------------------
# sweep

@dataclass(frozen=True)
class RatePolicy:
    m_min: int = 1024
    cells_per_period: int = 32
    cell_n: int = 256
    budget: float = 0.25
    richardson: bool = True
    exclude_largest: bool = True
    tol: float = 1e-10
    floor: float = 1e-8      # relative L2 error below which fits are degenerate
    threads: int = 1

    def m_fine(self, eps):
        return reference_resolution(eps, self.m_min, self.cells_per_period)


@dataclass
class RateRow:
    eps: float
    m_fine: int
    errL2_zero_order: float = float("nan")
    errH1_first_order: float = float("nan")
    errH1_plain: float = float("nan")
    normH1_ueps: float = float("nan")
    errH1_first_interior: float = float("nan")
    errH1_plain_interior: float = float("nan")
    boundary_layer_h1: float = float("nan")
    richardson_L2: float = float("nan")
    budget_ok: bool = False
    stable: bool = False
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


CSV_COLUMNS = ["eps", "m_fine", "errL2_zero_order", "errH1_first_order", "errH1_plain",
               "normH1_ueps", "errH1_first_interior", "errH1_plain_interior",
               "boundary_layer_h1", "richardson_L2", "budget_ok", "stable", "status"]


@dataclass
class RateReport:
    rows: list
    slopeL2: float | None = None
    slopeH1: float | None = None
    constants: dict = field(default_factory=dict)
    config_digest: str = ""
    fits: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    degenerate: str | None = None
    version: str = ""

    def to_json(self):
        return {"version": self.version, "config_digest": self.config_digest,
                "rows": [asdict(r) for r in self.rows], "slopeL2": self.slopeL2,
                "slopeH1": self.slopeH1, "constants": self.constants,
                "fits": self.fits, "checks": self.checks, "degenerate": self.degenerate}

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# config_digest={self.config_digest} version={self.version}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_svg(self):
        return loglog_svg(self)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.12e}"
    return str(v)


def config_digest(spec: ProblemSpec, eps_list, policy: RatePolicy):
    def enc(c):
        return None if c is None else c.to_json()

    f = spec.f
    blob = {"A": enc(spec.A), "V": enc(spec.V), "B": enc(spec.B), "a0": enc(spec.a0),
            "mu": float(spec.mu), "f": f if isinstance(f, (int, float)) else enc(f),
            "eps": [float(e) for e in eps_list],
            "policy": {k: v for k, v in asdict(policy).items() if k != "threads"}}
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def plan(eps_list, policy: RatePolicy):
    """``[(eps, m_fine)]`` in sweep order (decreasing eps)."""
    return [(float(e), policy.m_fine(e)) for e in sorted(eps_list, reverse=True)]


def _check_geometric(eps_list):
    e = sorted(eps_list, reverse=True)
    for a, b in zip(e, e[1:]):
        if not math.isclose(b / a, 0.5, rel_tol=1e-9):
            raise ConfigurationError(f"eps list must halve at each step, got {a} -> {b}")


def rate_sweep(spec: ProblemSpec, eps_list, policy: RatePolicy | None = None, *,
               version="") -> RateReport:
    policy = policy or RatePolicy()
    _check_geometric(eps_list)
    spec.validate()
    cell = solve_correctors(spec.A, spec.V, n=policy.cell_n, threads=min(policy.threads, 3))
    coeffs = homogenized_coefficients(spec.A, spec.V, spec.B, spec.a0, spec.mu_eff, cell)
    fl2 = f_norm(spec.f)
    u0_cache = {}

    def u0_at(m):
        if m not in u0_cache:
            u0_cache[m] = solve_homogenized(coeffs, spec.f, m, tol=policy.tol)
        return u0_cache[m]

    def one(item):
        eps, m = item
        row = RateRow(eps, m)
        try:
            u = solve_oscillating(spec, eps, m, tol=policy.tol)
            u0 = u0_at(m)
            v = first_order_approx(u0, cell, eps)
            row.errL2_zero_order = error_L2(u, u0)
            row.errH1_first_order = error_H1(u, v)
            row.errH1_plain = error_H1(u, u0)
            row.errH1_first_interior = error_H1(u, v, INTERIOR)
            row.errH1_plain_interior = error_H1(u, u0, INTERIOR)
            row.normH1_ueps = u.meta["norm_h1"]
            row.stable = bool(u.meta["stable"])
            if 2 * eps < 0.5:  # the cutoff strip must fit inside the square
                row.boundary_layer_h1 = boundary_layer_indicator(u0, cell, eps)
            del v
            if policy.richardson:
                uc = solve_oscillating(spec, eps, m // 2, tol=policy.tol)
                row.richardson_L2 = error_L2(u, uc) / 3.0
                row.budget_ok = bool(row.richardson_L2 <= policy.budget * row.errL2_zero_order)
            else:
                row.budget_ok = True
        except HomogenError as exc:
            row.status = f"{type(exc).__name__}: {exc}"
            log.warning(json.dumps({"event": "row_failed", "eps": eps, "reason": row.status}))
        return row

    items = plan(eps_list, policy)
    if policy.threads > 1:
        for m in sorted({m for _, m in items}):
            u0_at(m)
        with ThreadPoolExecutor(policy.threads) as ex:
            rows = list(ex.map(one, items))
    else:
        rows = [one(it) for it in items]

    report = RateReport(rows, config_digest=config_digest(spec, eps_list, policy),
                        version=version)
    good = [r for r in rows if r.ok]
    if len(good) < 3:
        exc = InsufficientDataError(f"only {len(good)} sweep rows succeeded; need 3")
        exc.report = report
        raise exc
    _summarize(report, policy, spec, fl2, u0_at(good[-1].m_fine))
    return report


def _fit_rows(rows, policy):
    usable = [r for r in rows if r.ok and r.budget_ok]
    if policy.exclude_largest and len(usable) >= 4:
        usable = usable[1:]
    return usable


def _summarize(report: RateReport, policy, spec, fl2, u0):
    good = [r for r in report.rows if r.ok]
    usable = _fit_rows(report.rows, policy)
    report.checks["rows_used"] = [r.eps for r in usable]
    report.checks["budget_ok"] = all(r.budget_ok for r in good)
    scale = max(r.normH1_ueps for r in good)
    if all(r.errL2_zero_order <= policy.floor * scale for r in good):
        report.degenerate = "degenerate, errors below floor"
    cols = {"L2": "errL2_zero_order", "H1_first": "errH1_first_order",
            "H1_plain": "errH1_plain", "H1_first_interior": "errH1_first_interior",
            "H1_plain_interior": "errH1_plain_interior", "boundary_layer": "boundary_layer_h1"}
    if report.degenerate is None:
        for key, col in cols.items():
            try:
                fit = fit_slope([(r.eps, getattr(r, col)) for r in usable])
            except (DegenerateFitError, InsufficientDataError) as exc:
                report.fits[key] = {"error": str(exc)}
                continue
            report.fits[key] = {"slope": fit.slope, "prefactor": fit.prefactor,
                                "r_squared": fit.r_squared}
        if "slope" in report.fits.get("L2", {}):
            report.slopeL2 = report.fits["L2"]["slope"]
        if "slope" in report.fits.get("H1_first", {}):
            report.slopeH1 = report.fits["H1_first"]["slope"]
    h2 = u0.meta.get("norm_h2", float("nan"))
    report.constants = {
        "C_L2": report.fits.get("L2", {}).get("prefactor", float("nan")) / fl2 if fl2 else None,
        "C_H1": report.fits.get("H1_first", {}).get("prefactor", float("nan")) / h2 if h2 else None,
        "f_l2": fl2, "u0_h2": h2, "stability_constant": stability_constant(spec.A.alpha)}
    ratios = [r.normH1_ueps / fl2 for r in good] if fl2 else [0.0]
    lo = min(ratios)
    report.checks["stability_spread"] = (max(ratios) / lo - 1.0) if lo > 0 else 0.0
    report.checks["stability_no_growth"] = bool(ratios[-1] <= 1.1 * float(np.median(ratios)))
    report.checks["stable_all"] = all(r.stable for r in good)
    e = [r.errL2_zero_order for r in good]
    report.checks["errL2_decreasing"] = all(b < a for a, b in zip(e, e[1:]))
    sp, sf = report.fits.get("H1_plain", {}).get("slope"), report.slopeH1
    report.checks["corrector_necessary"] = (bool(sp <= sf) if sp is not None and sf is not None
                                            else None)


# --------------------------------------------------------------------------
# SVG

def loglog_svg(report: RateReport, width=480, height=360):
    """Log-log plot of the error columns with fitted lines, as plain SVG text."""
    series = [("errL2_zero_order", "L2", "#1f77b4"),
              ("errH1_first_order", "H1_first", "#d62728"),
              ("errH1_plain", "H1_plain", "#2ca02c")]
    rows = [r for r in report.rows if r.ok]
    pts = [(r.eps, getattr(r, c)) for r in rows for c, _, _ in series
           if getattr(r, c) > 0 and math.isfinite(getattr(r, c))]
    if not pts:
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
                "</svg>\n")
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x0, x1 = min(lx) - 0.1, max(lx) + 0.1
    y0, y1 = min(ly) - 0.2, max(ly) + 0.2
    ml, mr, mt, mb = 60, 20, 20, 40

    def X(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * (width - ml - mr)

    def Y(v):
        return height - mb - (math.log10(v) - y0) / (y1 - y0) * (height - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" height="{height - mt - mb}" '
           'fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle">eps</text>',
           f'<text x="14" y="{height / 2:.1f}" transform="rotate(-90 14 {height / 2:.1f})" '
           'text-anchor="middle">error</text>']
    for k in range(math.ceil(y0), math.floor(y1) + 1):
        y = Y(10.0**k)
        out.append(f'<text x="{ml - 4}" y="{y + 4:.1f}" text-anchor="end">1e{k}</text>')
    for r in rows:
        out.append(f'<text x="{X(r.eps):.1f}" y="{height - mb + 14}" '
                   f'text-anchor="middle">{r.eps:g}</text>')
    for i, (col, key, colour) in enumerate(series):
        for r in rows:
            v = getattr(r, col)
            if v > 0 and math.isfinite(v):
                out.append(f'<circle cx="{X(r.eps):.1f}" cy="{Y(v):.1f}" r="3" fill="{colour}"/>')
        fit = report.fits.get(key, {})
        if "slope" in fit:
            ea, eb = rows[0].eps, rows[-1].eps
            ya, yb = fit["prefactor"] * ea ** fit["slope"], fit["prefactor"] * eb ** fit["slope"]
            out.append(f'<line x1="{X(ea):.1f}" y1="{Y(ya):.1f}" x2="{X(eb):.1f}" '
                       f'y2="{Y(yb):.1f}" stroke="{colour}"/>')
            label = f'{key} slope {fit["slope"]:.3f}'
        else:
            label = key
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 14 * i}" fill="{colour}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
