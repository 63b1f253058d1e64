"""Command-line front end: ``homogen {cell,solve,rates,defect,meanvalue} --config FILE``.

Experiments are defined by a JSON config validated against a fixed schema
before any computation. Outputs are deterministic: they embed the config
digest and the package version, and carry no timestamps.

Exit codes: 0 ok, 1 configuration error, 2 hypothesis violation,
3 solver failure, 4 insufficient data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, fields
from .errors import (ConfigurationError, DegenerateFitError, HomogenError, HypothesisViolation,
                     InsufficientDataError, SolverError, SupportError, TruncationError)

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_SOLVER, EXIT_DATA = 0, 1, 2, 3, 4

log = logging.getLogger("homogen")

# --------------------------------------------------------------------------
# schema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}

_DEFECT = {"type": "object", "additionalProperties": False,
           "required": ["amplitude", "sigma"],
           "properties": {"amplitude": _NUM, "sigma": _POS,
                          "center": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}}

_PRESET = {"type": "object", "additionalProperties": False, "required": ["preset"],
           "properties": {"preset": {"enum": ["laminate", "checkerboard", "identity", "zero",
                                               "almost_periodic", "constant"]},
                          "mean": _NUM, "amp": _NUM, "value": {}, "kind": {"type": "string"},
                          "alpha": _NUM, "beta": _NUM, "alpha0": _NUM, "defect": _DEFECT}}

_TERM = {"type": "object", "required": ["type"],
         "properties": {"type": {"enum": ["trig", "gaussian"]}, "coef": _NUM, "amplitude": _NUM,
                        "sigma": _POS, "center": {"type": "array"}, "factors": {"type": "array"},
                        "entry": {}},
         "additionalProperties": False}

_RAW = {"type": "object", "additionalProperties": False, "required": ["kind"],
        "properties": {"kind": {"enum": ["scalar", "vector2", "matrix2"]},
                       "structure": {"type": "string"}, "terms": {"type": "array", "items": _TERM},
                       "alpha": _NUM, "beta": _NUM, "alpha0": _NUM}}

_FIELD = {"oneOf": [_PRESET, _RAW]}

_SOURCE = {"oneOf": [_NUM, _RAW,
                     {"type": "object", "additionalProperties": False,
                      "required": ["manufactured"],
                      "properties": {"manufactured": {"const": "sin_sin"}}}]}

_COEFFS = {"A": _FIELD, "V": _FIELD, "B": _FIELD, "a0": _FIELD, "mu": _NUM}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "tolerances": {"type": "object", "additionalProperties": False,
                       "properties": {"cell": _POS, "solver": _POS, "defect": _POS}},
        "cell": {"type": "object", "additionalProperties": False, "required": ["A"],
                 "properties": {**_COEFFS, "n": _INT}},
        "solve": {"type": "object", "additionalProperties": False, "required": ["A", "m"],
                  "properties": {**_COEFFS, "f": _SOURCE, "eps": _POS, "m": _INT,
                                 "homogenized": {"type": "boolean"}, "n": _INT}},
        "rates": {"type": "object", "additionalProperties": False, "required": ["A", "eps"],
                  "properties": {**_COEFFS, "f": _SOURCE,
                                 "eps": {"type": "array", "items": _POS},
                                 "policy": {"type": "object", "additionalProperties": False,
                                            "properties": {"m_min": _INT, "cells_per_period": _INT,
                                                           "cell_n": _INT, "budget": _POS,
                                                           "richardson": {"type": "boolean"},
                                                           "exclude_largest": {"type": "boolean"},
                                                           "floor": _POS}}}},
        "defect": {"type": "object", "additionalProperties": False, "required": ["A", "L", "n"],
                   "properties": {"A": _FIELD, "V": _FIELD, "L": _INT, "n": _INT}},
        "meanvalue": {"type": "object", "additionalProperties": False, "required": ["field"],
                      "properties": {"field": _FIELD, "r_max": _POS, "levels": _INT,
                                     "shortcut": {"type": "boolean"}, "points_per_unit": _INT,
                                     "n_cell": _INT, "tol": _POS, "seminorm": {"type": "boolean"}}},
    },
}


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from exc


def digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# config -> objects

def build_field(spec, role=None):
    if spec is None:
        return None
    if "preset" not in spec:
        f = fields.CoefficientField.from_json(spec, name=role or "")
    else:
        p = spec["preset"]
        if p == "laminate":
            f = fields.laminate(spec.get("mean", 2.0), spec.get("amp", 1.0))
        elif p == "checkerboard":
            f = fields.checkerboard(spec.get("mean", 2.0), spec.get("amp", 1.0))
        elif p == "identity":
            f = fields.identity()
        elif p == "zero":
            f = fields.zero(spec.get("kind", role_kind(role)))
        elif p == "almost_periodic":
            f = fields.almost_periodic_example()
        else:
            bounds = {k: spec[k] for k in ("alpha", "beta", "alpha0") if k in spec}
            f = fields.constant(spec["value"], spec.get("kind"), **bounds)
        if "defect" in spec:
            d = spec["defect"]
            f = fields.gaussian_defect(f, d["amplitude"], d["sigma"], tuple(d.get("center", (0, 0))))
    want = role_kind(role)
    if want and f.kind != want:
        raise ConfigurationError(f"{role} must be a {want} field, got {f.kind}")
    return f


def role_kind(role):
    return {"A": "matrix2", "V": "vector2", "B": "vector2", "a0": "scalar",
            "A_per": "matrix2"}.get(role)


def build_source(src, coeffs):
    """Returns ``(f, exact)`` where ``exact`` is the analytic solution or None."""
    if src is None:
        return 1.0, None
    if isinstance(src, (int, float)):
        return float(src), None
    if "manufactured" in src:
        A, V, B, a0, mu = coeffs
        for c in (V, B):
            if c is not None and not c.is_zero:
                raise ConfigurationError("manufactured source needs V = B = 0")
        for c in (A, a0):
            if c is not None and c.structure != "constant":
                raise ConfigurationError("manufactured source needs constant A and a0")
        a = A(np.zeros(2))
        if abs(a[0, 1]) > 0 or a[0, 0] != a[1, 1]:
            raise ConfigurationError("manufactured source needs A = c I")
        c0 = float(a0(np.zeros(2))) if a0 is not None else 0.0
        k = 2 * math.pi**2 * float(a[0, 0]) + c0 + mu

        def exact(x):
            return np.sin(math.pi * x[..., 0]) * np.sin(math.pi * x[..., 1])

        return (lambda x: k * exact(x)), exact
    return fields.CoefficientField.from_json(src, name="f"), None


def problem_spec(block):
    from .solver import ProblemSpec

    A = build_field(block["A"], "A")
    V = build_field(block.get("V"), "V")
    B = build_field(block.get("B"), "B")
    a0 = build_field(block.get("a0"), "a0")
    spec = ProblemSpec(A, V, B, a0, float(block.get("mu", 0.0)), 1.0)
    f, exact = build_source(block.get("f"), (A, V, B, a0, spec.mu_eff))
    return ProblemSpec(A, V, B, a0, spec.mu, f), exact


# --------------------------------------------------------------------------
# output

class _JsonLines(logging.Formatter):
    def format(self, record):
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
        except ValueError:
            payload = {"message": msg}
        if not isinstance(payload, dict):
            payload = {"message": msg}
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, **payload},
                          sort_keys=True)


def _setup_logging():
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    root = logging.getLogger("homogen")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)
    root.propagate = False


def diag(level=logging.INFO, **kw):
    log.log(level, json.dumps(kw, sort_keys=True, default=str))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class Writer:
    """Single writer for all output files of a run."""

    def __init__(self, out, cfg_digest):
        self.out = Path(out)
        self.digest = cfg_digest
        self.files = []

    def _path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.files.append(str(p))
        return p

    def json(self, name, payload):
        body = {"config_digest": self.digest, "version": __version__, **_clean(payload)}
        self._path(name).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")

    def text(self, name, text):
        self._path(name).write_text(text)

    def field(self, stem, f):
        f.meta.update(config_digest=self.digest, version=__version__)
        self._path(stem + ".json")
        self._path(stem + ".f64")
        f.save(self.out / stem)


def _header_csv(text, cfg_digest):
    if text.startswith("#"):
        return text
    return f"# config_digest={cfg_digest} version={__version__}\n" + text


# --------------------------------------------------------------------------
# commands

def cmd_cell(cfg, out: Writer, args):
    from .cell import CELL_TOL, homogenized_coefficients, solve_correctors

    block = _block(cfg, "cell")
    tol = cfg.get("tolerances", {}).get("cell", CELL_TOL)
    A = build_field(block["A"], "A")
    V, B, a0 = (build_field(block.get(k), k) for k in ("V", "B", "a0"))
    n = block.get("n", 256)
    if args.dry_run:
        print(f"cell: n={n}, corrector solves: {2 + (V is not None and not V.is_zero)}")
        return EXIT_OK
    print(f"solving cell problems at n={n}")
    sol = solve_correctors(A, V, n=n, tol=tol, threads=args.threads)
    diag(event="cell_solved", n=n, iterations=list(sol.iterations), c_check=sol.c_check)
    from .solver import compute_mu0
    from .fields import sup_bound

    mu = max(float(block.get("mu", 0.0)), compute_mu0(A.alpha, A.beta, sup_bound([V, B, a0])))
    coeffs = homogenized_coefficients(A, V, B, a0, mu, sol)
    out.json("cell_solution.json", sol.to_json())
    out.json("homogenized.json", coeffs.to_json())
    print("A_hat =", np.array2string(np.asarray(coeffs.A_hat), precision=6))
    return EXIT_OK


def cmd_solve(cfg, out: Writer, args):
    from .solver import check_resolution, solve_homogenized, solve_oscillating

    block = _block(cfg, "solve")
    tol = cfg.get("tolerances", {}).get("solver", 1e-10)
    spec, exact = problem_spec(block)
    eps, m = float(block.get("eps", 1.0)), int(block["m"])
    homog = bool(block.get("homogenized", False))
    if args.dry_run:
        if not homog:
            check_resolution(eps, m)
        print(f"solve: eps={eps:g} m={m} homogenized={homog} mu={spec.mu_eff:g}")
        return EXIT_OK
    spec.validate()
    if homog:
        from .cell import homogenized_coefficients, solve_correctors

        sol = solve_correctors(spec.A, spec.V, n=block.get("n", 256), threads=args.threads)
        coeffs = homogenized_coefficients(spec.A, spec.V, spec.B, spec.a0, spec.mu_eff, sol)
        u = solve_homogenized(coeffs, spec.f, m, tol=tol)
    else:
        u = solve_oscillating(spec, eps, m, tol=tol)
    summary = {"eps": eps, "m": m, "homogenized": homog, "mu": spec.mu_eff,
               "h1_norm": u.h1_norm(), "l2_norm": u.norms()[0],
               **{k: v for k, v in u.meta.items() if k not in ("eps", "m")}}
    if exact is not None:
        from .rates import error_L2

        summary["l2_error"] = error_L2(u, exact)
        print(f"L2 error against the analytic solution: {summary['l2_error']:.3e}")
    diag(event="solved", **{k: summary[k] for k in ("eps", "m", "h1_norm")})
    out.field("solution", u)
    out.json("solve_summary.json", summary)
    return EXIT_OK


def cmd_rates(cfg, out: Writer, args):
    from .rates import RatePolicy, plan, rate_sweep

    block = _block(cfg, "rates")
    spec, _ = problem_spec(block)
    pol = dict(block.get("policy", {}))
    pol["tol"] = cfg.get("tolerances", {}).get("solver", 1e-10)
    policy = RatePolicy(threads=args.threads, **pol)
    eps = [float(e) for e in block["eps"]]
    if len(eps) < 3:
        raise InsufficientDataError(f"a rate sweep needs at least 3 eps values, got {len(eps)}")
    if args.dry_run:
        print("eps            m_fine")
        for e, m in plan(eps, policy):
            print(f"{e:<14.6g} {m}")
        return EXIT_OK
    print(f"rate sweep over {len(eps)} eps values")
    try:
        report = rate_sweep(spec, eps, policy, version=__version__)
    except InsufficientDataError as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            out.text("rates.csv", _header_csv(rep.to_csv(), out.digest))
        raise
    report.config_digest = out.digest
    out.text("rates.csv", report.to_csv())
    out.json("rates.json", report.to_json())
    out.text("rates.svg", report.to_svg())
    diag(event="rates", slopeL2=report.slopeL2, slopeH1=report.slopeH1)
    print(f"slopeL2={report.slopeL2} slopeH1={report.slopeH1}")
    return EXIT_OK


def cmd_defect(cfg, out: Writer, args):
    from . import defect
    from .solver import DiscreteField

    block = _block(cfg, "defect")
    tol = cfg.get("tolerances", {}).get("defect", defect.DEFECT_TOL)
    A = build_field(block["A"], "A")
    V = build_field(block.get("V"), "V")
    L, n = int(block["L"]), int(block["n"])
    if args.dry_run:
        print(f"defect: L={L} n={n} unknowns={(2 * L * n - 1) ** 2}")
        return EXIT_OK
    per = defect.solve_periodic_part(A, V, n)
    dc = defect.solve_defect_part(A, V, per, L, n, tol=tol)
    rows = defect.decay_report(dc)
    res = defect.full_residual(dc, A, V)
    chi00 = DiscreteField(dc.chi00, (-float(L), -float(L)), 2.0 * L, "dirichlet")
    out.field("chi00", chi00)
    out.text("defect_decay.csv", _header_csv(defect.decay_csv(rows), out.digest))
    summary = {"L": L, "n": n, "chi00_max_abs": float(np.abs(dc.chi00).max()),
               "iterations": dc.iterations, "solver_residual": dc.residual,
               "full_residual": res, "tail_fraction": dc.tail_fraction,
               "total_energy": dc.total_energy, "decay_exponent": defect.decay_exponent(rows),
               "seminorm_first": rows[0].seminorm_estimate,
               "seminorm_last": rows[-1].seminorm_estimate}
    out.json("defect.json", summary)
    diag(event="defect", chi00_max_abs=summary["chi00_max_abs"], full_residual=res)
    print(f"chi00 max |.| = {summary['chi00_max_abs']:.3e}")
    return EXIT_OK


def cmd_meanvalue(cfg, out: Writer, args):
    block = _block(cfg, "meanvalue")
    f = build_field(block["field"])
    if f.kind != "scalar":
        raise ConfigurationError("meanvalue needs a scalar field")
    kw = {k: block[k] for k in ("levels", "shortcut", "points_per_unit", "n_cell", "tol")
          if k in block}
    r_max = block.get("r_max", 64.0)
    if args.dry_run:
        print(f"meanvalue: r_max={r_max} structure={f.structure}")
        return EXIT_OK
    est = fields.mean_value(f, r_max, **kw)
    payload = {"value": est.value, "converged": est.converged, "radii": list(est.radii),
               "partials": list(est.partials), "structure": f.structure}
    if block.get("seminorm"):
        payload["seminorm"] = fields.besicovitch_seminorm(f, r_max, **kw)
    out.json("meanvalue.json", payload)
    print(f"mean value = {est.value:.6g} (converged: {est.converged})")
    return EXIT_OK


def _block(cfg, name):
    if name not in cfg:
        raise ConfigurationError(f"config has no {name!r} block")
    return cfg[name]


COMMANDS = {"cell": cmd_cell, "solve": cmd_solve, "rates": cmd_rates, "defect": cmd_defect,
            "meanvalue": cmd_meanvalue}


def exit_code(exc):
    if isinstance(exc, HypothesisViolation):
        return EXIT_HYPOTHESIS
    if isinstance(exc, (InsufficientDataError, DegenerateFitError)):
        return EXIT_DATA
    if isinstance(exc, (SolverError, SupportError)):
        return EXIT_SOLVER
    if isinstance(exc, (ConfigurationError, TruncationError)):
        return EXIT_CONFIG
    return EXIT_SOLVER


def build_parser():
    p = argparse.ArgumentParser(prog="homogen", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment definition")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
        s.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        diag(logging.ERROR, event="error", kind="ConfigurationError", message="--threads must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        writer = Writer(args.out, digest(cfg))
        code = COMMANDS[args.command](cfg, writer, args)
    except HomogenError as exc:
        code = exit_code(exc)
        extra = {"point": list(exc.point)} if getattr(exc, "point", None) is not None else {}
        diag(logging.ERROR, event="error", kind=type(exc).__name__, message=str(exc), exit_code=code, **extra)
        return code
    diag(event="done", command=args.command, files=writer.files)
    return code


if __name__ == "__main__":
    sys.exit(main())
