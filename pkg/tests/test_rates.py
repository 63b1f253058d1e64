import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homogen import fields, rates
from homogen.errors import ConfigurationError, DegenerateFitError, InsufficientDataError
from homogen.fem import Grid
from homogen.solver import DiscreteField, ProblemSpec

PI = math.pi
SMALL = rates.RatePolicy(m_min=256, cells_per_period=32, cell_n=64)


def sinsin(x):
    return np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])


@pytest.fixture(scope="module")
def report():
    return rates.rate_sweep(ProblemSpec(fields.laminate(), f=1.0), [1 / 4, 1 / 8, 1 / 16], SMALL,
                            version="test")


# -- fits

def test_exact_power_law():
    fit = rates.fit_slope([(e, 3 * e**1.5) for e in (0.5, 0.25, 0.125, 0.0625)])
    assert fit.slope == pytest.approx(1.5, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_constant_errors_slope_zero():
    slope, C, r2 = rates.fit_slope([(e, 0.2) for e in (0.5, 0.25, 0.125)])
    assert slope == pytest.approx(0.0, abs=1e-12) and C == pytest.approx(0.2)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 3), st.floats(1e-3, 1e3), st.integers(3, 6))
def test_fit_recovers_power(p, C, k):
    eps = [2.0**-i for i in range(k)]
    fit = rates.fit_slope([(e, C * e**p) for e in eps])
    assert fit.slope == pytest.approx(p, abs=1e-9)
    assert fit.prefactor == pytest.approx(C, rel=1e-8)


def test_fit_errors():
    with pytest.raises(InsufficientDataError):
        rates.fit_slope([(0.5, 1.0), (0.25, 0.5)])
    with pytest.raises(DegenerateFitError):
        rates.fit_slope([(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)])
    with pytest.raises(DegenerateFitError):
        rates.fit_slope([(0.5, 1.0), (0.5, 0.5), (0.5, 0.1)])


# -- norms

def test_error_of_identical_fields_is_zero():
    u = DiscreteField(sinsin(Grid(64).node_coords()))
    assert rates.error_L2(u, u) == 0.0 and rates.error_H1(u, u) == 0.0


def test_error_across_grids_and_callables():
    c = DiscreteField(sinsin(Grid(64).node_coords()))
    f = DiscreteField(sinsin(Grid(128).node_coords()))
    assert rates.error_L2(c, f) == pytest.approx(rates.error_L2(f, c))
    assert rates.error_L2(f, sinsin) < rates.error_L2(c, sinsin)
    assert rates.error_L2(c, f) < 2 * rates.error_L2(c, sinsin)


def test_refinement_is_exact_for_bilinear():
    bil = lambda x: 1 + x[..., 0] - 2 * x[..., 1] + 3 * x[..., 0] * x[..., 1]  # noqa: E731
    c = DiscreteField(bil(Grid(16).node_coords()), boundary="free")
    f = DiscreteField(bil(Grid(64).node_coords()), boundary="free")
    assert rates.error_H1(c, f) <= 1e-13


def test_domain_mismatch():
    a = DiscreteField(np.zeros((9, 9)))
    b = DiscreteField(np.zeros((9, 9)), lo=(-1.0, -1.0), length=3.0)
    with pytest.raises(ConfigurationError):
        rates.error_L2(a, b)


def test_interior_region_is_smaller():
    u = DiscreteField(sinsin(Grid(64).node_coords()))
    z = DiscreteField(np.zeros((65, 65)))
    assert rates.error_H1(u, z, rates.INTERIOR) < rates.error_H1(u, z)


# -- policy and planning

def test_plan_orders_and_resolves():
    p = rates.plan([1 / 32, 1 / 4, 1 / 8, 1 / 16], rates.RatePolicy())
    assert [e for e, _ in p] == [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    assert all(m * e >= 32 and m >= 1024 for e, m in p)


def test_geometric_list_required():
    with pytest.raises(ConfigurationError):
        rates.rate_sweep(ProblemSpec(fields.laminate()), [1 / 4, 1 / 8, 1 / 32], SMALL)


def test_digest_stable_and_sensitive():
    spec = ProblemSpec(fields.laminate(), f=1.0)
    e = [1 / 4, 1 / 8, 1 / 16]
    d = rates.config_digest(spec, e, SMALL)
    assert d == rates.config_digest(spec, e, rates.RatePolicy(256, 32, 64, threads=4))
    assert d != rates.config_digest(spec, e[:2], SMALL)
    assert d != rates.config_digest(ProblemSpec(fields.checkerboard(), f=1.0), e, SMALL)


# -- sweep

def test_sweep_rows(report):
    assert [r.eps for r in report.rows] == [1 / 4, 1 / 8, 1 / 16]
    assert all(r.ok and r.stable and r.budget_ok for r in report.rows)
    assert math.isnan(report.rows[0].boundary_layer_h1)
    assert report.rows[-1].boundary_layer_h1 > 0


def test_sweep_l2_rate(report):
    fit = report.fits["L2"]
    assert 0.85 <= fit["slope"] <= 1.15 and fit["r_squared"] >= 0.98
    assert report.slopeL2 == fit["slope"]


def test_sweep_checks(report):
    c = report.checks
    assert c["errL2_decreasing"] and c["stable_all"] and c["corrector_necessary"]
    assert c["stability_spread"] <= 0.2
    # three rows: nothing to drop
    assert c["rows_used"] == [1 / 4, 1 / 8, 1 / 16]


def test_corrector_beats_plain(report):
    for r in report.rows:
        assert r.errH1_first_order < r.errH1_plain
        assert r.errH1_first_interior < r.errH1_first_order


def test_csv_and_json(report):
    text = report.to_csv()
    first, body = text.split("\n", 1)
    assert first == f"# config_digest={report.config_digest} version=test"
    rows = list(csv.DictReader(io.StringIO(body)))
    assert list(rows[0]) == rates.CSV_COLUMNS and len(rows) == 3
    assert float(rows[1]["eps"]) == 0.125
    js = report.to_json()
    assert js["config_digest"] == report.config_digest and len(js["rows"]) == 3


def test_svg(report):
    svg = report.to_svg()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<circle") == 9
    assert "L2 slope" in svg


def test_failed_rows_are_reported():
    # half-mesh Richardson solves are under-resolved below eps = 1/4
    pol = rates.RatePolicy(m_min=128, cells_per_period=16, cell_n=32)
    with pytest.raises(InsufficientDataError) as exc:
        rates.rate_sweep(ProblemSpec(fields.laminate(), f=1.0), [1 / 4, 1 / 8, 1 / 16], pol)
    rows = exc.value.report.rows
    assert [r.ok for r in rows] == [True, False, False]
    assert all("UnderResolutionError" in r.status for r in rows[1:])


def test_zero_source_is_degenerate():
    pol = rates.RatePolicy(m_min=128, cells_per_period=16, cell_n=32, richardson=False)
    rep = rates.rate_sweep(ProblemSpec(fields.laminate(), f=0.0), [1 / 4, 1 / 8, 1 / 16], pol)
    assert rep.degenerate is not None and rep.slopeL2 is None
