"""
Tests for services/grid.py: annular grid, seminorms, log-integrals, gradients, CSV I/O
"""
import math

import numpy as np
import pytest

from services.catalog import make_field
from services.errors import ConfigurationError, DomainError
from services.grid import (
    AnnularGrid,
    ScalarField,
    acceptance_radii,
    field_from_csv,
    field_to_csv,
    gradient_field,
    log_integral,
    q_weight,
    radial_mean,
    seminorm,
    seminorm_profile,
    xp_norm,
    y1p0_norm,
    y_membership,
)


class TestAnnularGrid:
    def test_shape_and_counts(self, grid):
        assert grid.n_radial == 72
        assert grid.shape == (72, 32)
        assert grid.points.shape == (72, 32, 2)

    def test_weights_cover_the_annulus(self, grid):
        area = math.pi * (grid.r_max ** 2 - grid.r_min ** 2)
        assert grid.weights.sum() == pytest.approx(area, rel=1e-12)

    def test_ratio_must_align_with_shells(self):
        with pytest.raises(ConfigurationError):
            AnnularGrid(r_min=1.0, r_max=3.0, radial_per_octave=8)

    @pytest.mark.parametrize("kwargs", [
        {"dim": 4},
        {"r_min": 2.0, "r_max": 1.0},
        {"radial_per_octave": 2},
        {"angular_count": 4},
    ])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ConfigurationError):
            AnnularGrid(**kwargs)

    def test_dyadic_radii_stay_inside(self, grid):
        assert np.all(2.0 * grid.dyadic_radii <= grid.r_max * (1 + 1e-12))
        assert grid.dyadic_radii[0] == pytest.approx(grid.r_min)

    def test_annulus_outside_grid(self, grid):
        with pytest.raises(DomainError):
            grid.check_annulus(grid.r_max)

    def test_acceptance_radii(self, grid):
        radii = acceptance_radii(grid)
        assert radii.size > 0
        assert radii[0] >= 4.0 * grid.r_min
        assert np.all(radii <= grid.r_max / 4.0 * (1 + 1e-9))
        np.testing.assert_allclose(np.diff(np.log2(radii)), 1.0)


class TestScalarField:
    def test_non_finite_values_rejected(self, grid):
        values = np.zeros(grid.shape)
        values[3, 4] = np.nan
        with pytest.raises(DomainError):
            ScalarField(grid=grid, values=values)

    def test_arithmetic_keeps_source(self, grid, gaussian):
        doubled = gaussian + gaussian
        x = np.array([[0.3, 0.4]])
        np.testing.assert_allclose(doubled.source(x), 2.0 * np.exp(-0.25))
        np.testing.assert_allclose((2.0 * gaussian).values, doubled.values)

    def test_fields_on_different_grids(self, grid):
        other = AnnularGrid(r_min=2.0 ** -5, r_max=2.0 ** 4, radial_per_octave=8, angular_count=32)
        with pytest.raises(DomainError):
            ScalarField.zeros(grid) + ScalarField.zeros(other)


class TestSeminorms:
    def test_constant_field(self, grid):
        one = ScalarField(grid=grid, values=np.ones(grid.shape))
        r = grid.dyadic_radii[12]
        assert seminorm(one, r) == pytest.approx(math.sqrt(3.0 * math.pi), rel=1e-12)
        prof = seminorm_profile(one)
        np.testing.assert_allclose(prof.values, math.sqrt(3.0 * math.pi), rtol=1e-12)

    def test_p_range(self, grid, gaussian):
        with pytest.raises(DomainError):
            seminorm(gaussian, 1.0, p=1.0)
        with pytest.raises(DomainError):
            seminorm_profile(gaussian, p=math.inf)

    @pytest.mark.parametrize("s", [-3.5, 0.25, 7.0])
    def test_homogeneity(self, grid, gaussian, s):
        for r in grid.dyadic_radii[::12]:
            assert seminorm(s * gaussian, r) == pytest.approx(abs(s) * seminorm(gaussian, r), rel=1e-12)

    @pytest.mark.parametrize("fn", [
        lambda x: np.exp(-np.sum(x * x, axis=-1)),
        lambda x: x[..., 0] * np.exp(-np.sum(x * x, axis=-1)),
    ])
    def test_refinement_converges(self, fn):
        values = []
        for J, A in ((4, 16), (8, 32), (16, 64)):
            fine = AnnularGrid(dim=2, r_min=2.0 ** -3, r_max=2.0 ** 3, radial_per_octave=J, angular_count=A)
            values.append(seminorm(ScalarField.from_function(fine, fn), 0.5))
        change1, change2 = abs(values[1] - values[0]), abs(values[2] - values[1])
        assert change1 > 0.0
        # second-order rule: each halving of the log step cuts the change by about 4
        assert change2 <= 0.3 * change1

    def test_profile_matches_pointwise(self, grid, gaussian):
        prof = seminorm_profile(gaussian, p=3.0)
        for r in prof.radii[prof.radii <= 1.0][::9]:
            assert prof.at(r) == pytest.approx(seminorm(gaussian, r, p=3.0), rel=1e-10)

    def test_q_weight(self):
        np.testing.assert_allclose(q_weight(2.0, 1.0, [0.5, 1.0, 4.0]), [0.25, 1.0, 4.0])
        with pytest.raises(DomainError):
            q_weight(2.0, 1.0, [0.0])


class TestLogIntegral:
    def test_power_law_with_tails(self, grid):
        # int_0^inf min(rho, 1/rho) drho/rho = 2
        radii = grid.radii
        est = log_integral(radii, np.minimum(radii, 1.0 / radii), grid.radial_per_octave)
        assert est.finite
        assert est.value == pytest.approx(2.0, rel=1e-2)

    def test_divergent_end_flagged(self, grid):
        radii = grid.radii
        est = log_integral(radii, np.ones_like(radii), grid.radial_per_octave)
        assert est.divergent
        assert not est.finite

    def test_xp_norm_of_gaussian_finite(self, gaussian):
        assert xp_norm(gaussian).finite


class TestMembership:
    def test_gaussian_is_member(self, gaussian):
        _, mean, member = y_membership(gaussian, gradient_field(gaussian), M=1.8)
        assert member
        assert abs(mean) < 1e-12

    def test_slow_decay_fails_on_small_grid(self, grid):
        f = make_field("decay1", grid)
        _, mean, member = y_membership(f, gradient_field(f), M=1.8)
        assert not member
        outer = grid.radii[grid.nearest_shell(grid.r_max)]
        assert mean == pytest.approx((1.0 + outer ** 2) ** -0.5, rel=1e-12)

    def test_y1p0_norm_of_power_law(self):
        # |grad f| = rho^-3/2: N_2 = sqrt(pi) r^-3/2, and the two weighted pieces integrate to 6 and 2
        wide = AnnularGrid(dim=2, r_min=2.0 ** -12, r_max=2.0 ** 12, radial_per_octave=8, angular_count=8)
        rho = np.sqrt(np.sum(wide.points ** 2, axis=-1))
        f_grad = [ScalarField(grid=wide, values=rho ** -1.5), ScalarField.zeros(wide)]
        est = y1p0_norm(f_grad)
        assert est.finite
        assert est.value == pytest.approx(8.0 * math.sqrt(math.pi), rel=1e-2)


class TestGradients:
    def test_finite_differences_match_analytic(self, grid, gaussian):
        analytic = gradient_field(gaussian)
        numeric = gradient_field(ScalarField(grid=grid, values=gaussian.values))
        inner = slice(4, -4)
        for a, n in zip(analytic, numeric):
            np.testing.assert_allclose(n.values[inner], a.values[inner], atol=5e-3)

    def test_radial_mean_of_radial_field(self, grid, gaussian):
        r = grid.radii[20]
        assert radial_mean(gaussian, r) == pytest.approx(math.exp(-r * r), rel=1e-12)


class TestCsv:
    def test_field_written_and_read(self, grid, gaussian, tmp_path):
        path = tmp_path / "field.csv"
        field_to_csv(gaussian, path)
        back = field_from_csv(grid, path)
        np.testing.assert_array_equal(back.values, gaussian.values)

    def test_incomplete_file_rejected(self, grid, tmp_path):
        path = tmp_path / "partial.csv"
        path.write_text("j,a,rho,theta,value\n0,0,1,0,1.0\n", encoding="utf-8")
        with pytest.raises(DomainError):
            field_from_csv(grid, path)
