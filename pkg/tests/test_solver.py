import math

import numpy as np
import pytest

from homogen import fem, fields
from homogen.cell import HomogenizedCoefficients
from homogen.errors import ConfigurationError, HypothesisViolation, UnderResolutionError
from homogen.fields import CoefficientField, trig
from homogen.rates import error_L2
from homogen.solver import (DiscreteField, ProblemSpec, adjoint_matrix, assemble_dirichlet,
                            compute_mu0, h2_surrogate, solve_homogenized, solve_oscillating,
                            stability_constant)

PI = math.pi


def sinsin(x):
    return np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])


def manufactured():
    return ProblemSpec(fields.identity(), f=lambda x: 2 * PI**2 * sinsin(x))


def drift_spec(f=1.0):
    V = CoefficientField("vector2", (trig(0.5, ("sin", (0, 1)), entry=(0,)),), alpha0=0.5)
    B = CoefficientField("vector2", (trig(0.5, ("cos", (1, 0)), entry=(1,)),), alpha0=0.5)
    a0 = CoefficientField("scalar", (trig(0.5), trig(0.25, ("sin", (1, 0)))), alpha0=0.75)
    return ProblemSpec(fields.laminate(), V, B, a0, 0.0, f)


# -- mu0

def test_mu0_examples():
    assert compute_mu0(1.0, 3.0, 0.0) == 0.0
    assert compute_mu0(1.0, 1.0, 1.0) == 3.0
    assert compute_mu0(1.0, 1.0, 2.0) > 2 * compute_mu0(1.0, 1.0, 1.0)
    with pytest.raises(HypothesisViolation):
        compute_mu0(0.0, 1.0, 1.0)


def test_mu0_makes_form_coercive():
    """B(u,u) + mu0 |u|^2 >= alpha/2 |grad u|^2 on random discrete functions."""
    spec = drift_spec()
    m = 32
    K, _ = assemble_dirichlet(spec, 1 / 2, m, mu=spec.mu0)
    G, _ = assemble_dirichlet(ProblemSpec(fields.identity()), 1 / 2, m, mu=0.0)
    rng = np.random.default_rng(7)
    for _ in range(50):
        u = rng.standard_normal(K.shape[0])
        assert u @ (K @ u) >= 0.5 * spec.A.alpha * (u @ (G @ u)) * (1 - 1e-12)


def test_stability_constant_value():
    p = 1 / (math.sqrt(2) * PI)
    assert stability_constant(2.0) == pytest.approx(p * math.sqrt(1 + p * p))


# -- assembly

def test_laplacian_structure():
    K, rhs = assemble_dirichlet(ProblemSpec(fields.identity()), 1.0, 16)
    assert K.shape == (225, 225) and K.symmetric
    np.testing.assert_allclose(K.diagonal(), 8 / 3)
    np.testing.assert_allclose(rhs, 1 / 256)
    row = K.toarray()[7 * 15 + 7].reshape(15, 15)[6:9, 6:9]
    np.testing.assert_allclose(row, [[-1 / 3] * 3, [-1 / 3, 8 / 3, -1 / 3], [-1 / 3] * 3])


def test_drift_breaks_symmetry():
    K, _ = assemble_dirichlet(drift_spec(), 1 / 2, 32)
    assert not K.symmetric


def test_eps_one_matches_unscaled():
    A = fields.checkerboard()
    K1, _ = assemble_dirichlet(ProblemSpec(A), 1.0, 32)
    K2 = fem.assemble(fem.Grid(32), A=A)
    np.testing.assert_array_equal(K1.toarray(), K2.toarray())


def test_resolution_guard_names_m():
    with pytest.raises(UnderResolutionError) as exc:
        assemble_dirichlet(ProblemSpec(fields.laminate()), 1 / 8, 64)
    assert exc.value.required_m == 128 and "128" in str(exc.value)


def test_symmetric_spec_equals_adjoint():
    V = CoefficientField("vector2", (trig(0.4, ("sin", (1, 1)), entry=(0,)),), alpha0=0.4)
    spec = ProblemSpec(fields.laminate(), V, V, None, 0.0)
    assert spec.symmetric
    K, _ = assemble_dirichlet(spec, 1 / 2, 32)
    np.testing.assert_allclose(K.toarray(), adjoint_matrix(spec, 1 / 2, 32).toarray())
    np.testing.assert_allclose(K.toarray(), K.toarray().T, atol=1e-14)


# -- solves

def test_zero_source():
    u = solve_oscillating(ProblemSpec(fields.laminate(), f=0.0), 1 / 4, 64)
    np.testing.assert_array_equal(u.values, 0.0)


def test_manufactured_order_two():
    errs = [error_L2(solve_oscillating(manufactured(), 1.0, m), sinsin) for m in (32, 64, 128)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.9


def test_galerkin_residual_and_boundary():
    spec = drift_spec()
    u = solve_oscillating(spec, 1 / 4, 64)
    K, rhs = assemble_dirichlet(spec, 1 / 4, 64)
    x = u.values[1:-1, 1:-1].ravel()
    assert np.linalg.norm(K @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)
    assert not np.any(u.grid.boundary_mask() & (u.values != 0))
    assert u.meta["stable"] and u.meta["norm_h1"] <= u.meta["stability_constant"] * u.meta["f_l2"]


def test_laminate_self_convergence():
    spec = ProblemSpec(fields.laminate())
    u8 = solve_oscillating(spec, 1 / 8, 256)
    u16 = solve_oscillating(spec, 1 / 16, 256)
    u32 = solve_oscillating(spec, 1 / 32, 512)
    d1, d2 = error_L2(u8, u16), error_L2(u16, u32)
    assert d2 < d1 < 0.01
    coeffs = HomogenizedCoefficients(np.diag([math.sqrt(3), 2.0]), np.zeros(2), np.zeros(2), 0.0, 0.0)
    u0 = solve_homogenized(coeffs, 1.0, 512)
    assert error_L2(u32, u0) < error_L2(u8, u0)


def test_homogenized_manufactured():
    c = HomogenizedCoefficients(np.eye(2), np.zeros(2), np.zeros(2), 0.0, 0.0)
    f = lambda x: 2 * PI**2 * sinsin(x)  # noqa: E731
    errs = [error_L2(solve_homogenized(c, f, m), sinsin) for m in (32, 64)]
    assert math.log2(errs[0] / errs[1]) >= 1.9
    u = solve_homogenized(c, f, 64)
    assert u.meta["norm_h2"] == pytest.approx(h2_surrogate(u))


def test_homogenized_zero_and_monotone_in_mu():
    c = HomogenizedCoefficients(np.eye(2), np.zeros(2), np.zeros(2), 0.0, 0.0)
    assert not np.any(solve_homogenized(c, 0.0, 16).values)
    norms = []
    for mu in (1.0, 10.0, 100.0):
        c = HomogenizedCoefficients(np.diag([1.7, 2.0]), np.zeros(2), np.zeros(2), 0.5, mu)
        norms.append(solve_homogenized(c, 1.0, 64).norms()[0])
    assert norms[0] > norms[1] > norms[2]


def test_homogenized_rejects_indefinite():
    c = HomogenizedCoefficients(np.diag([1.0, -1.0]), np.zeros(2), np.zeros(2), 0.0, 0.0)
    with pytest.raises(HypothesisViolation):
        solve_homogenized(c, 1.0, 16)


# -- DiscreteField

def test_field_save_load(tmp_path):
    u = DiscreteField(np.arange(25.0).reshape(5, 5), (0.0, 0.0), 1.0, "free", {"eps": 0.5})
    u.save(tmp_path / "u")
    raw = (tmp_path / "u.f64").read_bytes()
    assert len(raw) == 25 * 8
    assert np.frombuffer(raw, "<f8")[7] == 7.0
    back = DiscreteField.load(tmp_path / "u")
    np.testing.assert_array_equal(back.values, u.values)
    assert back.meta == {"eps": 0.5} and back.boundary == "free"


def test_field_validation():
    with pytest.raises(ConfigurationError):
        DiscreteField(np.zeros((3, 4)))
    with pytest.raises(ConfigurationError):
        DiscreteField(np.zeros((3, 3)), boundary="weird")


def test_norms_of_sinsin():
    x = fem.Grid(256).node_coords()
    u = DiscreteField(sinsin(x))
    l2, g = u.norms()
    assert l2 == pytest.approx(0.5, abs=1e-4)
    assert g == pytest.approx(PI / math.sqrt(2), rel=1e-4)
