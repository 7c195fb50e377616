# services/catalog.py
"""
Right-hand side catalog: id -> ScalarField carrying its analytic gradient
- decay1:      (1 + |x|^2)^(-1/2)
- gaussian:    exp(-|x|^2)
- bump:        (1 - |x|^2)^3 on |x| < 1
- zero
- alpha:A      |x|^(1-A) cut off beyond 2 r0, frozen on the innermost octave (N_p(grad f; r) ~ r^-A)
"""
import logging

import numpy as np

from services.errors import ConfigurationError
from services.grid import AnnularGrid, ScalarField
from services.localization import cutoff, cutoff_slope

logger = logging.getLogger(__name__)

FIELD_IDS = ("decay1", "gaussian", "bump", "zero", "alpha:A")


def _rho(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(x, dtype=float) ** 2, axis=-1))


def _radial_gradient(x: np.ndarray, slope: np.ndarray) -> np.ndarray:
    rho = _rho(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(rho[..., None] > 0, np.asarray(x, dtype=float) / rho[..., None], 0.0)
    return slope[..., None] * unit


def _parse_alpha(field_id: str) -> float:
    try:
        alpha = float(field_id.split(":", 1)[1])
    except (IndexError, ValueError):
        raise ConfigurationError(f"Bad field id '{field_id}', expected alpha:A")
    if not 0.0 < alpha < 2.0:
        raise ConfigurationError(f"alpha must lie in (0, N), got {alpha}")
    return alpha


def power_field(grid: AnnularGrid, alpha: float, r0: float = 1.0) -> ScalarField:
    """|x|^(1-alpha) eta(|x|; 2 r0) with the power frozen below 2 r_min"""
    floor = 2.0 * grid.r_min
    power = 1.0 - alpha

    def fn(x):
        rho = _rho(x)
        return np.maximum(rho, floor) ** power * cutoff(rho, 2.0 * r0)

    def grad(x):
        rho = _rho(x)
        base = np.maximum(rho, floor)
        d_base = np.where(rho > floor, power * base ** (power - 1.0), 0.0)
        slope = d_base * cutoff(rho, 2.0 * r0) + base ** power * cutoff_slope(rho, 2.0 * r0)
        return _radial_gradient(x, slope)

    return ScalarField.from_function(grid, fn, gradient=grad, name=f"alpha:{alpha:g}")


def make_field(field_id: str, grid: AnnularGrid, r0: float = 1.0) -> ScalarField:
    """
    Build a catalog right-hand side on the grid.

    Raises:
        ConfigurationError: unknown id
    """
    if field_id == "decay1":
        fn = lambda x: (1.0 + _rho(x) ** 2) ** -0.5
        grad = lambda x: _radial_gradient(x, -_rho(x) * (1.0 + _rho(x) ** 2) ** -1.5)
    elif field_id == "gaussian":
        fn = lambda x: np.exp(-_rho(x) ** 2)
        grad = lambda x: _radial_gradient(x, -2.0 * _rho(x) * np.exp(-_rho(x) ** 2))
    elif field_id == "bump":
        fn = lambda x: np.clip(1.0 - _rho(x) ** 2, 0.0, None) ** 3
        grad = lambda x: _radial_gradient(x, -6.0 * _rho(x) * np.clip(1.0 - _rho(x) ** 2, 0.0, None) ** 2)
    elif field_id == "zero":
        return ScalarField.zeros(grid, name="zero")
    elif field_id.startswith("alpha:"):
        return power_field(grid, _parse_alpha(field_id), r0)
    else:
        raise ConfigurationError(f"Unknown field id '{field_id}'. Expected one of {FIELD_IDS}")
    logger.debug(f"[Catalog] field '{field_id}' on {grid.describe()}")
    return ScalarField.from_function(grid, fn, gradient=grad, name=field_id)

