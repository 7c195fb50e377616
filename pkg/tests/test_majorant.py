"""
Tests for services/majorant.py: kernels on the log axis, constants, majorant, bound shapes
"""
import math

import numpy as np
import pytest

from services.errors import (
    AdmissibilityError,
    ConfigurationError,
    ConvergenceError,
    DomainError,
    InfeasibleConstantsError,
)
from services.grid import SeminormProfile
from services.majorant import (
    LogProfile,
    b_norm,
    bound_thm1,
    bound_thm3,
    choose_constants,
    d_factor,
    dini_bound,
    e_weight,
    explicit_integrated_bound,
    kk_apply,
    make_log_profile,
    make_spec,
    majorant_v,
    minimal_sigma,
    profile_from_seminorms,
    sigma_kernels,
    sigma_minus,
    sigma_plus,
    uniqueness_contraction,
    verify_lemma_33,
    verify_lemma_34_36,
    verify_lemma_41,
    with_modulus,
)

LN2 = math.log(2.0)


@pytest.fixture(scope="module")
def spec():
    return make_spec(2, 0.02, c1=10.0, c2=10.0, c3=10.0, c_k=1e-2)


@pytest.fixture(scope="module")
def zeta():
    return make_log_profile(-6.0, 6.0, LN2 / 8.0, fn=lambda t: np.exp(-np.abs(t)), name="zeta")


# ============================================================
# PROFILES AND SPECS
# ============================================================

class TestProfiles:
    def test_uniform_grid_required(self):
        with pytest.raises(DomainError):
            LogProfile(t=np.array([0.0, 1.0, 3.0]), values=np.zeros(3))

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            LogProfile(t=np.array([0.0, 1.0]), values=np.array([1.0, np.inf]))

    def test_from_seminorms_reverses_radii(self):
        radii = 2.0 ** np.arange(-2, 3, dtype=float)
        prof = profile_from_seminorms(SeminormProfile(p=2.0, radii=radii, values=radii.copy()))
        np.testing.assert_allclose(prof.t, -np.log(radii[::-1]))
        np.testing.assert_allclose(prof.values, radii[::-1])
        assert prof.per_octave == 1


class TestSpec:
    def test_defaults(self, spec):
        assert spec.M == pytest.approx(2.0 - 10.0 * 0.02)
        assert spec.kernel_constant == pytest.approx(2.0 * (3 * 0.02 / 1.8 + 0.2) ** 2)
        assert spec.contraction == pytest.approx(1e-2 * spec.kernel_constant)

    @pytest.mark.parametrize("kwargs", [
        {"c1": 30.0},
        {"c2": 30.0},
        {"c_k": 0.0},
    ])
    def test_constraints(self, kwargs):
        with pytest.raises(ConfigurationError):
            make_spec(2, 0.02, **kwargs)

    def test_choose_constants_satisfies_inequality(self):
        spec = choose_constants(2, 0.02, 0.05, lambda_star=0.05)
        assert spec.constant_inequality <= 0.95 + 1e-12
        assert spec.c1 == spec.c2 == 10.0

    def test_choose_constants_rejects_large_lambda(self):
        with pytest.raises(AdmissibilityError):
            choose_constants(2, 0.1, 0.05, lambda_star=0.05)

    def test_choose_constants_infeasible(self):
        with pytest.raises(InfeasibleConstantsError):
            choose_constants(2, 0.02, 50.0, lambda_star=0.05)

    def test_with_modulus_keeps_constants(self, spec):
        flat = with_modulus(spec, lambda nu: np.zeros(np.shape(nu)), label="flat")
        assert flat.c3 == spec.c3 and flat.label == "flat"
        assert flat.lam(1.0) == 0.0


# ============================================================
# KERNELS
# ============================================================

class TestKernels:
    def test_sigma_plus_constant_modulus(self, spec):
        s, t = np.array([-1.0, 0.0, 2.0]), 1.0
        expected = np.where(s <= t, np.exp(10.0 * 0.02 * (t - s)), np.exp(spec.M * (t - s)))
        np.testing.assert_allclose(sigma_plus(spec, s, t), expected, rtol=1e-10)

    def test_sigma_minus_is_reciprocal_below_diagonal(self, spec):
        s, t = np.array([-2.0, -0.5]), 1.0
        np.testing.assert_allclose(sigma_minus(spec, s, t) * sigma_plus(spec, s, t), 1.0, rtol=1e-10)

    def test_diagonal_values(self, spec):
        assert sigma_plus(spec, 0.3, 0.3) == pytest.approx(1.0)
        assert d_factor(spec, 0.7, 0.7) == pytest.approx(1.0)

    def test_e_weight_branches(self, spec):
        lam = 0.02
        assert e_weight(spec, 0.0, 1.0) == pytest.approx(lam ** 2 * math.exp(-2.0))
        assert e_weight(spec, 1.0, 0.0) == pytest.approx(lam * (lam * math.exp(-1.0) + lam))

    def test_dispatch(self, spec):
        assert sigma_kernels(spec, "D", 0.0, 1.0) == pytest.approx(math.exp(10.0 * 0.02))
        with pytest.raises(ConfigurationError):
            sigma_kernels(spec, "X", 0.0, 1.0)


# ============================================================
# MAJORANT AND MINIMAL SOLUTION
# ============================================================

class TestMajorant:
    def test_majorant_is_positive(self, spec, zeta):
        v = majorant_v(spec, zeta)
        assert np.all(v.values > 0)
        assert not v.divergent

    def test_kk_is_linear(self, spec, zeta):
        other = zeta.with_values(np.exp(-0.5 * (zeta.t - 1.0) ** 2), name="other")
        a, b = 0.7, 2.5
        combined = kk_apply(spec, zeta.with_values(a * zeta.values + b * other.values))
        expected = a * kk_apply(spec, zeta).values + b * kk_apply(spec, other).values
        np.testing.assert_allclose(combined.values, expected, rtol=1e-12)

    @pytest.mark.parametrize("s", [0.1, 3.0, 40.0])
    def test_majorant_is_positively_homogeneous(self, spec, zeta, s):
        scaled = majorant_v(spec, zeta.with_values(s * zeta.values))
        np.testing.assert_allclose(scaled.values, s * majorant_v(spec, zeta).values, rtol=1e-12)

    def test_flat_majorant_closed_form(self, zeta):
        flat = make_spec(2, 0.0)
        v = majorant_v(flat, zeta)
        t = zeta.t
        exact = 10.0 * np.where(t >= 0, 2.0 - (2.0 / 3.0) * np.exp(-t), 2.0 * np.exp(t) - (2.0 / 3.0) * np.exp(2.0 * t))
        inner = (t >= -1.0) & (t <= 2.0)
        np.testing.assert_allclose(v.values[inner], exact[inner], rtol=2e-2)

    def test_minimal_solution_below_majorant(self, spec, zeta):
        v = majorant_v(spec, zeta)
        kz = v.with_values(spec.c_k * zeta.values, name="kz")
        sigma, iterations = minimal_sigma(spec, kz)
        assert iterations >= 1
        assert np.all(sigma.values <= v.values * 1.02)
        np.testing.assert_allclose(kk_apply(spec, sigma).values + kz.values, sigma.values, rtol=1e-8, atol=1e-11)

    def test_minimal_solution_of_zero(self, spec, zeta):
        sigma, iterations = minimal_sigma(spec, zeta.with_values(np.zeros_like(zeta.values)))
        assert iterations == 1
        np.testing.assert_array_equal(sigma.values, 0.0)

    def test_negative_forcing_rejected(self, spec, zeta):
        with pytest.raises(DomainError):
            minimal_sigma(spec, zeta.with_values(-zeta.values))

    def test_no_convergence_raises(self, zeta):
        strong = make_spec(2, 0.02, c_k=50.0)
        with pytest.raises(ConvergenceError):
            minimal_sigma(strong, zeta, max_iter=5)


class TestBoundShapes:
    def test_existence_bound_equals_majorant(self, spec, zeta):
        v = majorant_v(spec, zeta)
        r = math.exp(-zeta.t[40])
        assert bound_thm1(spec, zeta, r) == pytest.approx(v.values[40], rel=1e-10)

    def test_radius_outside_profile(self, spec, zeta):
        with pytest.raises(DomainError):
            bound_thm1(spec, zeta, math.exp(-10.0))

    def test_local_bound_needs_small_radius(self, spec, zeta):
        with pytest.raises(DomainError):
            bound_thm3(spec, zeta, 1.0, zeta, 2.0, 1.0)
        assert bound_thm3(spec, zeta, 1.0, zeta, 0.25, 1.0) > 0

    def test_b_norm(self, spec, zeta):
        assert b_norm(spec, zeta.with_values(np.zeros_like(zeta.values))) == 0.0
        assert b_norm(spec, zeta) > 0

    def test_dini_bound(self, spec, zeta):
        flat = make_spec(2, 0.0)
        assert dini_bound(flat, zeta.t) == pytest.approx(1.0)
        span = zeta.t[-1] - zeta.t[0]
        assert dini_bound(spec, zeta.t) == pytest.approx(math.exp(10.0 * 0.02 * span), rel=1e-6)


# ============================================================
# VERIFICATION SUITES
# ============================================================

class TestVerification:
    def test_kernel_estimates(self, spec):
        report = verify_lemma_33(spec, n_pairs=200, seed=1)
        assert report.passed, report.failures
        assert report.values["kernel_constant"] == pytest.approx(spec.kernel_constant)

    def test_majorant_inequality(self, spec, zeta):
        kz = zeta.with_values(np.zeros_like(zeta.values), name="zero")
        report = verify_lemma_34_36(spec, zeta, kz)
        assert report.passed, report.failures

    def test_majorant_inequality_grid_mismatch(self, spec, zeta):
        other = make_log_profile(-3.0, 3.0, LN2 / 8.0)
        with pytest.raises(DomainError):
            verify_lemma_34_36(spec, zeta, other)

    def test_integrated_estimates(self, spec):
        report = verify_lemma_41(spec, n_points=9, s_range=4.0)
        assert report.passed, report.failures
        assert math.isfinite(report.values["uniform_C"])

    def test_explicit_bound_flat_limit(self):
        flat = make_spec(2, 0.0)
        s = np.array([0.0, 1.0])
        np.testing.assert_allclose(explicit_integrated_bound(flat, s), (4.0 + s) * np.exp(-2.0 * s))

    def test_uniqueness_contraction(self, spec, zeta):
        report = uniqueness_contraction(spec, 3, zeta.t)
        assert report.passed, report.failures
        assert report.values["contraction"] < 1.0
