"""
Tests for services/oracle.py: closed-form Gaussian potentials and the spectral oracle
"""
import math

import numpy as np
import pytest

from services.errors import ConfigurationError, DomainError
from services.grid import ScalarField
from services.operators import pv_transform, riesz_potential
from services.oracle import (
    CartesianBox,
    flat_multiplier_oracle,
    gaussian_potential,
    gaussian_riesz,
    oracle_mismatch,
    riesz_square_residual,
)


class TestClosedForms:
    def test_potential_at_origin(self):
        assert gaussian_potential(np.zeros(2)) == pytest.approx(math.pi ** 1.5)

    def test_potential_far_field(self):
        # mass pi over distance r
        x = np.array([300.0, 0.0])
        assert gaussian_potential(x) == pytest.approx(math.pi / 300.0, rel=1e-4)

    def test_riesz_is_odd(self):
        x = np.array([[0.7, 0.2], [-0.7, 0.2]])
        values = gaussian_riesz(x, 1)
        assert values[0] == pytest.approx(-values[1])
        assert gaussian_riesz(np.array([0.0, 0.5]), 1) == 0.0


class TestBox:
    def test_box_covers_quarter_range(self, grid):
        box = CartesianBox.for_grid(grid)
        assert box.half_width == pytest.approx(grid.r_max / 4.0)
        assert box.n & (box.n - 1) == 0
        assert box.region_radius == pytest.approx(box.half_width / 2.0)

    def test_mass_of_gaussian(self, grid, gaussian):
        box = CartesianBox.for_grid(grid)
        assert box.mass(box.sample(gaussian)) == pytest.approx(math.pi, rel=1e-6)

    def test_boundary_check(self, grid):
        box = CartesianBox.for_grid(grid)
        values = np.ones((box.n, box.n))
        with pytest.raises(DomainError):
            box.check_boundary(values)


class TestOracle:
    def test_zero_field(self, grid):
        result = flat_multiplier_oracle(ScalarField.zeros(grid), "I")
        assert result.calibration is None
        np.testing.assert_array_equal(result.field.values, 0.0)

    def test_unknown_operator(self, gaussian):
        with pytest.raises(ConfigurationError):
            flat_multiplier_oracle(gaussian, "T1")

    def test_potential_matches_quadrature(self, gaussian, op_cfg):
        quad = riesz_potential(gaussian, cfg=op_cfg)
        result = flat_multiplier_oracle(gaussian, "I", op_cfg)
        assert result.calibration.kappa == pytest.approx(2.0 * math.pi, rel=5e-2)
        assert oracle_mismatch(quad, result) <= 5e-2

    def test_riesz_matches_quadrature(self, gaussian, op_cfg):
        quad = pv_transform(gaussian, "R2", None, op_cfg)
        result = flat_multiplier_oracle(gaussian, "R2", op_cfg)
        assert oracle_mismatch(quad, result) <= 5e-2

    def test_mismatch_of_identical_fields(self, gaussian, op_cfg):
        result = flat_multiplier_oracle(gaussian, "I", op_cfg)
        assert oracle_mismatch(result.field, result) == 0.0


class TestRieszSquare:
    @pytest.mark.parametrize("fn", [
        lambda x: np.exp(-np.sum(x * x, axis=-1)),
        lambda x: x[..., 0] * np.exp(-2.0 * np.sum(x * x, axis=-1)),
    ])
    def test_sum_of_squares_is_minus_identity(self, grid, fn):
        u = ScalarField.from_function(grid, fn, name="square")
        assert riesz_square_residual(u) <= 1e-2

    def test_zero_field(self, grid):
        assert riesz_square_residual(ScalarField.zeros(grid)) == 0.0
