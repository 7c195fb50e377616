"""
Tests for services/operators.py and services/nearfield.py
"""
import math

import numpy as np
import pytest

from services.catalog import make_field
from services.errors import ConfigurationError, MembershipError
from services.geometry import make_surface
from services.grid import AnnularGrid, ScalarField, acceptance_radii, gradient_field, seminorm_profile, vector_magnitude
from services.nearfield import gauss_legendre, richardson_weights
from services.operators import (
    Kernel,
    c_n,
    disc_potential,
    empirical_operator_norms,
    evaluate_off_grid,
    fit_constant,
    gradient_bound_rhs,
    gradient_mismatch,
    interior_radii,
    pv_transform,
    r_solve,
    riesz_potential,
    single_layer,
    single_layer_grad,
)
from services.oracle import gaussian_potential, gaussian_riesz
from services.solver import layer_gradient_check, potential_bounds_check, relative_residual, residual_profile


def _middle(grid):
    rho = np.sqrt(np.sum(grid.points ** 2, axis=-1))
    return (rho >= 4.0 * grid.r_min) & (rho <= 4.0)


# ============================================================
# KERNELS AND CONSTANTS
# ============================================================

class TestKernel:
    @pytest.mark.parametrize("kind,family,k", [
        ("T1", "T", 1), ("T3", "T", 3), ("R2", "R", 2), ("Rpsi1", "Rpsi", 1),
        ("I", "I", 0), ("Ipsi", "Ipsi", 0), ("S", "S", 0),
    ])
    def test_parse(self, kind, family, k):
        kernel = Kernel.parse(kind)
        assert (kernel.family, kernel.k) == (family, k)
        assert kernel.label == kind

    @pytest.mark.parametrize("kind", ["T4", "R3", "R0", "Q1", "S1", ""])
    def test_parse_rejects(self, kind):
        with pytest.raises(ConfigurationError):
            Kernel.parse(kind)

    def test_principal_value_families(self):
        assert Kernel.parse("T3").principal_value
        assert not Kernel.parse("S").principal_value
        assert not Kernel.parse("R1").needs_surface

    def test_c_n(self):
        assert c_n(2) == pytest.approx(1.0 / (2.0 * math.pi))
        assert c_n(3) == pytest.approx(1.0 / math.pi ** 2)

    def test_disc_potential_centre(self):
        assert disc_potential(np.array([0.0]), 0.5)[0] == pytest.approx(math.pi)

    def test_disc_potential_far_field(self):
        r = np.array([200.0])
        assert disc_potential(r, 1.0)[0] == pytest.approx(math.pi / 200.0, rel=1e-4)


class TestNearField:
    @pytest.mark.parametrize("levels", [2, 3, 4])
    def test_richardson_removes_polynomial_error(self, levels):
        w = richardson_weights(levels)
        eps = 2.0 ** -np.arange(levels)
        for power in range(levels):
            expected = 1.0 if power == 0 else 0.0
            assert np.dot(w, eps ** power) == pytest.approx(expected, abs=1e-12)

    def test_gauss_legendre_exact_for_polynomials(self):
        x, w = gauss_legendre(0.0, 2.0, 4)
        assert np.dot(w, x ** 7) == pytest.approx(2.0 ** 8 / 8.0, rel=1e-12)


# ============================================================
# APPLICATION
# ============================================================

class TestApplication:
    def test_riesz_potential_of_gaussian(self, grid, gaussian, op_cfg):
        result = riesz_potential(gaussian, cfg=op_cfg)
        mask = _middle(grid)
        exact = gaussian_potential(grid.points)
        np.testing.assert_allclose(result.values[mask], exact[mask], atol=1e-2 * math.pi ** 1.5)

    def test_single_layer_on_flat_is_riesz_potential(self, grid, gaussian, flat, op_cfg):
        np.testing.assert_allclose(
            single_layer(gaussian, flat, op_cfg).values, riesz_potential(gaussian, cfg=op_cfg).values, rtol=1e-12
        )

    def test_riesz_transform_of_gaussian(self, grid, gaussian, op_cfg):
        result = pv_transform(gaussian, "R1", None, op_cfg)
        mask = _middle(grid)
        exact = gaussian_riesz(grid.points, 1)
        scale = float(np.max(np.abs(exact[mask])))
        np.testing.assert_allclose(result.values[mask], exact[mask], atol=2e-2 * scale)

    def test_top_transform_vanishes_on_flat(self, gaussian, flat, op_cfg):
        np.testing.assert_array_equal(pv_transform(gaussian, "T3", flat, op_cfg).values, 0.0)

    def test_flat_single_layer_gradient_has_no_top_term(self, gaussian, flat, op_cfg):
        grads = single_layer_grad(gaussian, flat, op_cfg)
        t1 = pv_transform(gaussian, "T1", flat, op_cfg)
        np.testing.assert_allclose(grads[0].values, -t1.values)

    def test_weak_kernel_rejected_as_pv(self, gaussian):
        with pytest.raises(ConfigurationError):
            pv_transform(gaussian, "I")

    def test_weighted_potential_needs_surface(self, gaussian):
        with pytest.raises(ConfigurationError):
            riesz_potential(gaussian, weighted=True)

    def test_three_dimensional_grid_rejected(self):
        grid3 = AnnularGrid(dim=3, r_min=2.0 ** -2, r_max=2.0 ** 2, radial_per_octave=4, angular_count=8)
        with pytest.raises(ConfigurationError):
            riesz_potential(ScalarField.zeros(grid3))

    def test_potential_at_origin(self, gaussian):
        value = evaluate_off_grid(gaussian, np.zeros((1, 2)), "I")[0]
        assert value == pytest.approx(math.pi ** 1.5, rel=1e-2)


def _apply_kind(kind, u, surface, cfg):
    if kind == "I":
        return riesz_potential(u, cfg=cfg)
    if kind == "S":
        return single_layer(u, surface, cfg)
    return pv_transform(u, kind, surface, cfg)


class TestLinearity:
    @pytest.mark.parametrize("kind,surface_name", [
        ("I", None), ("S", "cone"), ("R1", None), ("T1", "cone"), ("T3", "cone"), ("Rpsi2", "cone"),
    ])
    def test_operator_is_linear(self, request, gaussian, bump, op_cfg, kind, surface_name):
        surface = request.getfixturevalue(surface_name) if surface_name else None
        a, b = (float(x) for x in np.random.default_rng(11).normal(size=2))
        combined = _apply_kind(kind, a * gaussian + b * bump, surface, op_cfg)
        separate = a * _apply_kind(kind, gaussian, surface, op_cfg) + b * _apply_kind(kind, bump, surface, op_cfg)
        scale = max(float(np.max(np.abs(combined.values))), 1.0)
        np.testing.assert_allclose(combined.values, separate.values, rtol=0.0, atol=1e-10 * scale)


# ============================================================
# FLAT SOLUTION OPERATOR
# ============================================================

class TestFlatInversion:
    @pytest.mark.parametrize("fixture_name", ["gaussian", "bump"])
    def test_single_layer_of_r_f_recovers_f(self, request, grid, flat, op_cfg, fixture_name):
        f = request.getfixturevalue(fixture_name)
        u = r_solve(f, op_cfg)
        res = residual_profile(u, f, flat, op_cfg)
        rel = relative_residual(res, seminorm_profile(f), acceptance_radii(grid))
        assert float(np.max(rel)) <= 5e-2

    def test_slowly_decaying_rhs_rejected(self, grid, op_cfg):
        with pytest.raises(MembershipError):
            r_solve(make_field("decay1", grid), op_cfg)

    def test_gradient_bound_constant_finite(self, grid, gaussian, op_cfg):
        u = r_solve(gaussian, op_cfg)
        radii = interior_radii(grid)
        lhs = np.array([seminorm_profile(u).at(r) for r in radii])
        rhs = gradient_bound_rhs(seminorm_profile(vector_magnitude(gradient_field(gaussian))), radii)
        c = fit_constant(lhs, rhs)
        assert 0.0 < c < math.inf


# ============================================================
# GRADIENT IDENTITIES
# ============================================================

# Reduced-grid tolerances; verify-operators asserts 1e-2 on the flat plane and 2e-2 on tilt:0.05.
class TestGradientIdentities:
    @pytest.mark.parametrize("surface_id", ["flat", "tilt:0.05"])
    def test_single_layer_grad_matches_finite_differences(self, grid, gaussian, op_cfg, surface_id):
        surface = make_surface(surface_id)
        analytic = single_layer_grad(gaussian, surface, op_cfg)
        fd = gradient_field(single_layer(gaussian, surface, op_cfg))
        assert gradient_mismatch(analytic, fd, interior_radii(grid)) <= 5e-2

    def test_potential_gradient_is_riesz_transform(self, grid, bump, op_cfg):
        fd = gradient_field(riesz_potential(bump, cfg=op_cfg))
        identity = [pv_transform(bump, f"R{k}", None, op_cfg) * (-1.0 / c_n(2)) for k in (1, 2)]
        assert gradient_mismatch(fd, identity, interior_radii(grid)) <= 5e-2

    def test_gradient_mismatch_of_identical_fields(self, grid, gaussian):
        grad = gradient_field(gaussian)
        assert gradient_mismatch(grad, grad, interior_radii(grid)) == 0.0

    def test_potential_bounds_suite(self, grid, op_cfg):
        report = potential_bounds_check(grid, op_cfg, identity_tol=5e-2)
        assert 0.0 < report.values["C_potential"] < math.inf
        assert 0.0 < report.values["C_gradient"] < math.inf
        assert report.passed

    def test_layer_gradient_suite(self, grid, flat, op_cfg):
        report = layer_gradient_check(flat, grid, op_cfg, tol=5e-2, field_ids=("gaussian",))
        assert report.passed
        assert len(report.lines) == 1


class TestHelpers:
    def test_fit_constant(self):
        assert fit_constant([1.0, 3.0], [2.0, 2.0]) == pytest.approx(1.5)
        assert fit_constant([0.0, 0.0], [0.0, 0.0]) == 0.0
        assert fit_constant([1.0], [0.0]) == math.inf

    def test_interior_radii_margin(self, grid):
        radii = interior_radii(grid)
        assert radii.min() >= 4.0 * grid.r_min * (1 - 1e-9)
        assert radii.max() <= grid.r_max / 8.0 * (1 + 1e-9)


# ============================================================
# OPERATOR NORMS
# ============================================================

class TestOperatorNorms:
    def test_scaling_in_lambda(self, grid, op_cfg):
        surfaces = [make_surface("tilt:0.01"), make_surface("tilt:0.04")]
        report = empirical_operator_norms(surfaces, grid, r=1.0, n_trials=1, cfg=op_cfg, seed=3)
        assert report.top_exponent == pytest.approx(1.0, abs=0.3)
        assert report.difference_exponent == pytest.approx(2.0, abs=0.5)
        assert report.top_ratio["tilt:0.04"] > report.top_ratio["tilt:0.01"]
