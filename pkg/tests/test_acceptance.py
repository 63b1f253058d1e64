"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The sweep behind criteria 4, 5 and 9 is the expensive part (several minutes on
one core); it runs once per module and is shared.
"""

import math
import time

import numpy as np
import pytest

from homogen import approx, defect, fields, rates
from homogen.cell import cell_bounds, homogenized_coefficients, solve_correctors
from homogen.fields import CoefficientField, trig
from homogen.solver import ProblemSpec, solve_oscillating

PI = math.pi
SQRT3 = math.sqrt(3.0)
SWEEP_EPS = [1 / 4, 1 / 8, 1 / 16, 1 / 32]


def verdict(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def sinsin(x):
    return np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])


def benchmark_spec():
    V = CoefficientField("vector2", (trig(0.5, ("sin", (0, 1)), entry=(0,)),), alpha0=0.5)
    B = CoefficientField("vector2", (trig(0.5, ("cos", (1, 0)), entry=(1,)),), alpha0=0.5)
    a0 = CoefficientField("scalar", (trig(0.5), trig(0.25, ("sin", (1, 0)))), alpha0=0.75)
    # mu = 0 means the Garding shift mu0 is used
    return ProblemSpec(fields.laminate(), V, B, a0, 0.0, 1.0)


@pytest.fixture(scope="module")
def sweep():
    return rates.rate_sweep(benchmark_spec(), SWEEP_EPS, rates.RatePolicy())


def test_criterion_1_laminate_oracle(capsys):
    t = time.perf_counter()
    A = fields.laminate()
    sol = solve_correctors(A, n=256)
    h = homogenized_coefficients(A, None, None, None, 0.0, sol).A_hat
    dt = time.perf_counter() - t
    err = float(np.abs(h - np.diag([SQRT3, 2.0])).max())
    verdict(capsys, 1, err <= 1e-3 and dt < 10,
            f"max|A_hat - diag(sqrt3, 2)| = {err:.2e} (<= 1e-3), {dt:.1f} s (< 10 s)")


def test_criterion_2_corrector_identity(capsys):
    t = time.perf_counter()
    A = fields.laminate()
    sol = solve_correctors(A, A.column(0), n=256)
    dt = time.perf_counter() - t
    gap = float(np.abs(sol.chi0 - sol.chi[0]).max())
    verdict(capsys, 2, gap <= 1e-12 and dt < 10,
            f"max|chi0 - chi1| = {gap:.2e} (<= 1e-12), {dt:.1f} s (< 10 s)")


def test_criterion_3_A_hat_properties(capsys):
    t = time.perf_counter()
    failures = []
    for name, A in (("laminate", fields.laminate()), ("2d", fields.checkerboard())):
        sol = solve_correctors(A, n=256)
        h = homogenized_coefficients(A, None, None, None, 0.0, sol).A_hat
        if abs(h[0, 1] - h[1, 0]) > 1e-8:
            failures.append(f"{name}: asymmetry {abs(h[0, 1] - h[1, 0]):.1e}")
        ev = np.linalg.eigvalsh(0.5 * (h + h.T))
        if ev.min() < A.alpha - 1e-6 or ev.max() > A.beta + 1e-6:
            failures.append(f"{name}: eigenvalues {ev}")
        voigt, reuss = cell_bounds(A, sol.grid)
        for xi in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])):
            if not (xi @ reuss @ xi <= xi @ h @ xi <= xi @ voigt @ xi):
                failures.append(f"{name}: Voigt-Reuss fails on {xi}")
    dt = time.perf_counter() - t
    verdict(capsys, 3, not failures and dt < 30,
            f"{'; '.join(failures) or 'symmetry, spectrum and bounds hold'}, {dt:.1f} s (< 30 s)")


def test_criterion_4_L2_rate(capsys, sweep):
    fit = sweep.fits.get("L2", {})
    slope, r2 = fit.get("slope", float("nan")), fit.get("r_squared", float("nan"))
    budgets = all(r.ok and r.budget_ok for r in sweep.rows)
    errs = ", ".join(f"{r.errL2_zero_order:.3e}" for r in sweep.rows)
    verdict(capsys, 4, 0.85 <= slope <= 1.15 and r2 >= 0.98 and budgets,
            f"L2 slope {slope:.3f} in [0.85, 1.15], r2 {r2:.4f} >= 0.98, "
            f"budgets ok: {budgets}; errors {errs}")


def test_criterion_5_H1_rate(capsys, sweep):
    s1 = sweep.fits.get("H1_first", {}).get("slope", float("nan"))
    s0 = sweep.fits.get("H1_plain", {}).get("slope", float("nan"))
    verdict(capsys, 5, 0.4 <= s1 <= 0.8 and s0 <= 0.2,
            f"first-order H1 slope {s1:.3f} in [0.4, 0.8]; plain H1 slope {s0:.3f} <= 0.2")


def test_criterion_6_smoothing(capsys):
    t = time.perf_counter()
    eps0 = 1 / 8
    one = approx.padded_sample(lambda x: np.ones(x.shape[:-1]), 256, approx.default_padding(eps0))
    exact_one = bool(np.all(approx.smooth(one, eps0, method="direct").values == 1.0))
    aff = approx.padded_sample(lambda x: 3 * x[..., 0] - 2 * x[..., 1] + 1, 256,
                               approx.default_padding(eps0))
    out = approx.smooth(aff, eps0, method="direct")
    X = out.grid.node_coords()
    aff_err = float(np.abs(out.values - (3 * X[..., 0] - 2 * X[..., 1] + 1)).max())
    ratios = [approx.smoothing_defect_ratio(sinsin, e, 512) for e in (1 / 8, 1 / 16, 1 / 32)]
    band = max(ratios) / min(ratios)
    dt = time.perf_counter() - t
    verdict(capsys, 6, exact_one and aff_err <= 1e-10 and band <= 1.3 and dt < 30,
            f"S(1) == 1 exactly: {exact_one}; affine error {aff_err:.1e} (<= 1e-10); "
            f"ratios {', '.join(f'{r:.3e}' for r in ratios)} band {band:.2f} (<= 1.3), "
            f"{dt:.1f} s (< 30 s)")


def test_criterion_7_defect_corrector(capsys):
    t = time.perf_counter()
    n = 16
    Aper = fields.laminate()
    A = fields.gaussian_defect(Aper, 0.5, 0.5)
    V = Aper.column(0)  # periodic V, no decaying part in V
    per = defect.solve_periodic_part(A, V, n)
    d8 = defect.solve_defect_part(A, V, per, 8, n)
    d16 = defect.solve_defect_part(A, V, per, 16, n)
    res = max(defect.full_residual(d, A, V) for d in (d8, d16))
    change = d16.central_h1(2.0, other=d8) / d16.central_h1(2.0)
    rows = defect.decay_report(d16)
    drop = rows[0].seminorm_estimate / rows[-1].seminorm_estimate
    dt = time.perf_counter() - t
    verdict(capsys, 7, res <= 10 * defect.DEFECT_TOL and change <= 0.05 and drop >= 2 and dt < 120,
            f"(a) residual {res:.1e} (<= {10 * defect.DEFECT_TOL:.0e}); "
            f"(b) central H1 change {100 * change:.2f}% (<= 5%); "
            f"(c) seminorm drop x{drop:.1f} (>= 2), {dt:.1f} s (< 120 s)")


def test_criterion_8_mean_value(capsys):
    t = time.perf_counter()
    cos1 = CoefficientField("scalar", (trig(1.0, ("cos", (1, 0))),), alpha0=1.0)
    m_cos = fields.mean_value(cos1, 64, shortcut=False).value
    m_ap = fields.mean_value(fields.almost_periodic_example(), 128).value
    per = CoefficientField("scalar", (trig(2.0), trig(0.7, ("sin", (1, 2))),
                                      trig(0.3, ("cos", (1, 0)), ("cos", (0, 1)))), alpha0=3.0)
    gap = abs(fields.mean_value(per, 64).value - fields.mean_value(per, 64, shortcut=False).value)
    dt = time.perf_counter() - t
    verdict(capsys, 8, abs(m_cos) <= 1e-3 and abs(m_ap) <= 5e-3 and gap <= 1e-3 and dt < 10,
            f"|M(cos)| {abs(m_cos):.1e} (<= 1e-3); |M(ap)| {abs(m_ap):.1e} (<= 5e-3); "
            f"shortcut vs nested {gap:.1e} (<= 1e-3), {dt:.1f} s (< 10 s)")


def test_criterion_9_solver_verification(capsys, sweep):
    spec = ProblemSpec(fields.identity(), f=lambda x: 2 * PI**2 * sinsin(x))
    errs = [rates.error_L2(solve_oscillating(spec, 1.0, m), sinsin) for m in (64, 128, 256)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    spread = sweep.checks["stability_spread"]
    verdict(capsys, 9, min(orders) >= 1.9 and spread <= 0.2,
            f"manufactured L2 orders {', '.join(f'{o:.3f}' for o in orders)} (>= 1.9); "
            f"stability spread {100 * spread:.1f}% (<= 20%)")

