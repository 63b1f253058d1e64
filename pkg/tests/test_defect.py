import math

import numpy as np
import pytest

from homogen import defect, fields
from homogen.cell import solve_correctors
from homogen.errors import ConfigurationError, TruncationError
from homogen.fields import CoefficientField, GaussianTerm, trig

N = 8


@pytest.fixture(scope="module")
def setup():
    Aper = fields.laminate()
    A = fields.gaussian_defect(Aper, 0.5, 0.5)
    V = Aper.column(0)
    per = defect.solve_periodic_part(A, V, N)
    return A, V, per


@pytest.fixture(scope="module")
def solved(setup):
    A, V, per = setup
    return {L: defect.solve_defect_part(A, V, per, L, N) for L in (8, 16)}


def test_periodic_part_zero_without_V():
    sol = defect.solve_periodic_part(fields.laminate(), None, N)
    np.testing.assert_array_equal(sol.chi0, 0.0)


def test_periodic_part_single_mode():
    H = CoefficientField("vector2", (trig(-2 * math.pi, ("cos", (1, 0)), entry=(0,)),),
                         alpha0=2 * math.pi)
    sol = defect.solve_periodic_part(fields.identity(), H, 64)
    y1 = np.arange(64) / 64
    np.testing.assert_allclose(sol.chi0, np.sin(2 * np.pi * y1)[:, None] * np.ones(64), atol=2e-3)


def test_periodic_part_laminate_is_chi1(setup):
    _, _, per = setup
    assert np.abs(per.chi0 - per.chi[0]).max() <= 1e-12


def test_periodic_part_ignores_defect():
    Aper = fields.laminate()
    a = defect.solve_periodic_part(Aper, Aper.column(0), N)
    b = defect.solve_periodic_part(fields.gaussian_defect(Aper, 0.9, 0.3), Aper.column(0), N)
    np.testing.assert_array_equal(a.chi0, b.chi0)


def test_no_defect_gives_exact_zero(setup):
    _, V, per = setup
    dc = defect.solve_defect_part(fields.gaussian_defect(fields.laminate(), 0.0, 0.5), V, per, 4, N)
    assert np.abs(dc.chi00).max() == 0.0
    rows = defect.decay_report(dc)
    assert all(r.annulus_energy == 0 and r.seminorm_estimate == 0 for r in rows)


def test_boundary_is_zero(solved):
    w = solved[8].chi00
    assert not np.any(w[0]) and not np.any(w[-1]) and not np.any(w[:, 0]) and not np.any(w[:, -1])
    assert np.abs(w).max() > 1e-4


def test_full_residual(setup, solved):
    A, V, _ = setup
    assert defect.full_residual(solved[8], A, V) <= 10 * defect.DEFECT_TOL


def test_full_residual_with_V_defect():
    A = fields.checkerboard()
    V = CoefficientField("vector2", (trig(0.5, ("sin", (0, 1)), entry=(0,)),
                                     GaussianTerm(0.4, (0.5, -0.5), 0.5, (1,))), alpha0=1.0)
    per = defect.solve_periodic_part(A, V, N)
    dc = defect.solve_defect_part(A, V, per, 6, N)
    assert np.abs(dc.chi00).max() > 0
    assert defect.full_residual(dc, A, V) <= 10 * defect.DEFECT_TOL


def test_L_doubling(solved):
    change = solved[16].central_h1(2.0, other=solved[8]) / solved[16].central_h1(2.0)
    assert change <= 0.05


def test_energy_profile(solved):
    dc = solved[16]
    assert all(e >= 0 for _, e in dc.annulus_energies)
    assert dc.tail_fraction <= 0.10
    rows = defect.decay_report(dc)
    assert rows[-1].seminorm_estimate <= 0.5 * rows[0].seminorm_estimate
    outer = [r.annulus_energy for r in rows[len(rows) // 2:]]
    assert all(b <= a for a, b in zip(outer, outer[1:]))
    assert rows[-1].tail_energy == 0.0
    assert rows[0].tail_energy == pytest.approx(dc.total_energy - rows[0].annulus_energy)


def test_decay_csv(solved):
    text = defect.decay_csv(defect.decay_report(solved[8]))
    lines = text.splitlines()
    assert lines[0] == "R,annulus_energy,tail_energy,seminorm_estimate"
    assert len(lines) == 9


def test_truncation_guard(setup):
    _, V, per = setup
    A = fields.gaussian_defect(fields.laminate(), 0.5, 0.5, (5.0, 0.0))
    with pytest.raises(TruncationError):
        defect.solve_defect_part(A, V, per, 6, N)


def test_box_and_shape_guards(setup):
    A, V, per = setup
    with pytest.raises(ConfigurationError):
        defect.solve_defect_part(A, V, per, 3, N)
    with pytest.raises(ConfigurationError):
        defect.solve_defect_part(A, V, per, 8, 2 * N)


def test_tiling_matches_cell():
    U = solve_correctors(fields.checkerboard(), n=N).chi[0]
    T = defect.tile(U, 4)
    assert T.shape == (8 * N + 1,) * 2
    np.testing.assert_array_equal(T[N:2 * N, 3 * N:4 * N], U)


def test_divergence_free_V_gives_tiny_residual():
    # V = (sin 2 pi y2, 0) is divergence free, so chi0 vanishes and F is roundoff
    A = fields.laminate()
    V = CoefficientField("vector2", (trig(0.5, ("sin", (0, 1)), entry=(0,)),), alpha0=0.5)
    per = defect.solve_periodic_part(A, V, N)
    dc = defect.solve_defect_part(fields.gaussian_defect(A, 0.5, 0.5), V, per, 4, N)
    assert np.abs(dc.chi0).max() <= 1e-12
    assert defect.full_residual(dc, fields.gaussian_defect(A, 0.5, 0.5), V) <= 1e-10
