"""
Tests for services/solver.py: fixed-point map, Picard iteration, diagnostics
"""
import math

import numpy as np
import pytest

from services.catalog import make_field
from services.errors import AdmissibilityError, DomainError, MembershipError
from services.geometry import make_surface
from services.grid import ScalarField, SeminormProfile, gradient_field
from services.majorant import make_spec, sigma_minus
from services.operators import r_solve
from services.solver import (
    alpha_decay_experiment,
    apply_K,
    constant_stability,
    decay_check,
    difference_gradient,
    estimate_ck,
    inner_slope,
    picard_solve,
    relative_residual,
    threshold_radius,
    uniqueness_check,
)


# ============================================================
# FIXED-POINT MAP
# ============================================================

class TestFixedPointMap:
    def test_difference_gradient_zero_on_flat(self, gaussian, flat, op_cfg):
        for g in difference_gradient(gaussian, flat, op_cfg):
            np.testing.assert_array_equal(g.values, 0.0)

    def test_difference_gradient_zero_for_zero_density(self, grid, cone, op_cfg):
        for g in difference_gradient(ScalarField.zeros(grid), cone, op_cfg):
            np.testing.assert_array_equal(g.values, 0.0)

    def test_map_on_flat_ignores_u(self, grid, gaussian, bump, flat, op_cfg):
        a = apply_K(ScalarField.zeros(grid), gaussian, flat, op_cfg)
        b = apply_K(bump, gaussian, flat, op_cfg)
        np.testing.assert_array_equal(a.values, b.values)

    def test_map_at_zero_is_flat_solution_on_flat(self, grid, gaussian, flat, op_cfg):
        k0 = apply_K(ScalarField.zeros(grid), gaussian, flat, op_cfg)
        np.testing.assert_allclose(k0.values, r_solve(gaussian, op_cfg).values, rtol=1e-12, atol=1e-15)

    def test_map_is_affine_in_rhs(self, grid, gaussian, bump, cone, op_cfg):
        u = 0.3 * bump
        g1, g2 = gradient_field(gaussian), gradient_field(bump)
        zero = ScalarField.zeros(grid)
        both = apply_K(u, gaussian + bump, cone, op_cfg, f_grad=[a + b for a, b in zip(g1, g2)])
        k1 = apply_K(u, gaussian, cone, op_cfg, f_grad=g1)
        k2 = apply_K(u, bump, cone, op_cfg, f_grad=g2)
        k0 = apply_K(u, zero, cone, op_cfg, f_grad=[zero, zero])
        scale = float(np.max(np.abs(both.values)))
        np.testing.assert_allclose(both.values, k1.values + k2.values - k0.values, rtol=0.0, atol=1e-8 * scale)


# ============================================================
# PICARD ITERATION
# ============================================================

class TestPicard:
    def test_flat_solution_in_one_step(self, gaussian, flat, op_cfg):
        u, report = picard_solve(gaussian, flat, op_cfg)
        assert report.converged
        assert report.iterations == 1
        np.testing.assert_allclose(u.values, r_solve(gaussian, op_cfg).values, rtol=1e-12, atol=1e-15)
        assert float(np.max(report.relative_residual)) <= 5e-2

    def test_inadmissible_surface(self, gaussian, op_cfg):
        with pytest.raises(AdmissibilityError):
            picard_solve(gaussian, make_surface("tilt:0.4"), op_cfg)

    def test_slowly_decaying_rhs(self, grid, flat, op_cfg):
        with pytest.raises(MembershipError):
            picard_solve(make_field("decay1", grid), flat, op_cfg)

    def test_curved_surface_converges(self, gaussian, cone, op_cfg):
        u, report = picard_solve(gaussian, cone, op_cfg, tol=1e-6)
        assert report.converged
        assert report.iterations >= 1
        assert len(report.records) == len(report.residual_profiles)
        assert np.all(np.isfinite(u.values))

    def test_per_radius_rows(self, gaussian, flat, op_cfg):
        _, report = picard_solve(gaussian, flat, op_cfg)
        rows = report.per_radius()
        assert len(rows) == len(report.radii)
        assert set(rows[0]) == {"r", "seminorm", "bound", "ratio", "relative_residual"}

    @pytest.mark.parametrize("surface_name", ["flat", "cone"])
    def test_uniqueness(self, request, grid, op_cfg, surface_name):
        report = uniqueness_check(request.getfixturevalue(surface_name), grid, op_cfg)
        assert report.passed, report.failures


# ============================================================
# DIAGNOSTICS
# ============================================================

class TestResidual:
    def test_relative_to_largest_rhs_seminorm(self):
        radii = np.array([1.0, 2.0])
        res = SeminormProfile(p=2.0, radii=radii, values=np.array([0.1, 0.2]))
        f = SeminormProfile(p=2.0, radii=radii, values=np.array([1.0, 2.0]))
        np.testing.assert_allclose(relative_residual(res, f, radii), [0.05, 0.1])


class TestDecay:
    @pytest.fixture(scope="class")
    def spec(self):
        return make_spec(2, 0.02)

    def _profile(self, grid, values_of_t):
        radii = grid.dyadic_radii
        return SeminormProfile(p=2.0, radii=radii, values=values_of_t(-np.log(radii)))

    def test_zero_profile(self, grid, spec):
        report = decay_check(self._profile(grid, np.zeros_like), spec)
        assert report.passed

    def test_faster_than_ceiling(self, grid, spec):
        prof = self._profile(grid, lambda t: sigma_minus(spec, t, 0.0) * np.exp(-0.5 * np.abs(t)))
        report = decay_check(prof, spec)
        assert report.passed, report.failures

    def test_slower_than_ceiling(self, grid, spec):
        prof = self._profile(grid, lambda t: sigma_minus(spec, t, 0.0) * np.exp(0.5 * np.abs(t)))
        assert not decay_check(prof, spec).passed


class TestThreshold:
    def test_flat(self, grid, flat):
        assert threshold_radius(flat, grid, 0.5, 10.0) == grid.r_max

    def test_tilt(self, grid, tilt):
        assert threshold_radius(tilt, grid, 0.5, 10.0) == pytest.approx(grid.r_max)
        assert threshold_radius(tilt, grid, 0.1, 10.0) == 0.0

    def test_cone(self, grid):
        # 0.1 r / sqrt(1 + 4 r^2) <= 0.025 iff r <= 1/sqrt(12)
        limit = 1.0 / math.sqrt(12.0)
        r1 = threshold_radius(make_surface("cone:0.05"), grid, 0.5, 10.0)
        assert r1 <= limit
        assert r1 * 2.0 ** (1.0 / grid.radial_per_octave) > limit

    def test_inner_slope(self, grid):
        radii = grid.dyadic_radii
        prof = SeminormProfile(p=2.0, radii=radii, values=radii ** 1.5)
        assert inner_slope(prof, grid) == pytest.approx(1.5)

    def test_inner_slope_without_points(self, grid):
        prof = SeminormProfile(p=2.0, radii=np.array([1.0]), values=np.array([1.0]))
        assert inner_slope(prof, grid) == 0.0


class TestConstantEstimate:
    def test_flat(self, grid, flat, op_cfg):
        c_k, details = estimate_ck(flat, grid, op_cfg)
        assert details["C_diff"] == 0.0
        assert details["max_psi_inv"] == 1.0
        assert c_k == pytest.approx(2.0 * details["C_R"])
        assert 0.0 < c_k < math.inf


class TestExperiments:
    def test_alpha_outside_range(self, grid, flat, op_cfg):
        with pytest.raises(DomainError):
            alpha_decay_experiment(flat, 2.5, make_spec(2, 0.0), grid, op_cfg)

    def test_alpha_decay_reports_data_norms(self, grid, flat, op_cfg):
        report = alpha_decay_experiment(flat, 0.5, make_spec(2, 0.0), grid, op_cfg, localize=False)
        assert 0.0 < report.values["y1p0_norm"] < math.inf
        assert report.values["y1p_norm"] > 0.0
        assert any(line.name == "f in Y^{1,p}_0" and line.passed for line in report.lines)


class TestConstantStability:
    def test_stable_constants_pass(self):
        report = constant_stability("cone:0.02", {0.5: {"local": 1.0, "C r > 4 r0": 2.0},
                                                  1.0: {"local": 1.3, "C r > 4 r0": 1.5}})
        assert report.passed
        assert {line.name for line in report.lines} == {"local stable across r0", "C r > 4 r0 stable across r0"}

    def test_unstable_constant_fails_the_suite(self):
        report = constant_stability("cone:0.02", {0.5: {"local": 1.0}, 1.0: {"local": 3.0}})
        assert not report.passed
        assert report.lines[0].asserted

    def test_single_radius_has_no_lines(self):
        assert constant_stability("flat", {1.0: {"local": 1.0}}).lines == []
