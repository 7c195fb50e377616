# services/localization.py
"""
Localization near the origin: S(eta u + Psi) = eta f + [S, eta]u + S Psi
- eta: smooth radial cut-off, 1 on |x| < r0, 0 on |x| > 2 r0
- chi: polynomial bump on [r0, 2 r0], normalized on the grid so that its radial
  integral d rho / rho equals N / |S^{N-1}|
- Psi = -chi(|y|) sum_i beta_i y_i / |y| cancels the first moments gamma_i of (1 - eta) u
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from models.run_models import OperatorConfig
from services.errors import DomainError
from services.geometry import LipschitzSurface
from services.grid import ScalarField
from services.operators import single_layer

logger = logging.getLogger(__name__)


def _log_position(r, r0: float) -> np.ndarray:
    return np.clip(np.log2(np.asarray(r, dtype=float) / r0), 0.0, 1.0)


def cutoff(r, r0: float) -> np.ndarray:
    """eta(r): quintic smoothstep in log2(r / r0), C^2"""
    s = _log_position(r, r0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def cutoff_slope(r, r0: float) -> np.ndarray:
    """d eta / dr"""
    r = np.asarray(r, dtype=float)
    s = _log_position(r, r0)
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, -30.0 * s * s * (1.0 - s) ** 2 / (np.maximum(r, 1e-300) * math.log(2.0)), 0.0)


def bump_shape(r, r0: float) -> np.ndarray:
    """(s(1 - s))^3 with s = log2(r / r0); zero outside [r0, 2 r0]"""
    s = _log_position(r, r0)
    return (s * (1.0 - s)) ** 3


def chi_integral(chi, r0: float, n: int = 32) -> float:
    """int_0^inf chi(rho) drho/rho by Gauss-Legendre in log rho"""
    xi, wi = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (xi + 1.0) * math.log(2.0) + math.log(r0)
    return float(0.5 * math.log(2.0) * np.sum(wi * chi(np.exp(t))))


@dataclass(eq=False)
class CorrectionSpec:
    r0: float
    chi_scale: float
    gamma: np.ndarray
    beta: np.ndarray
    psi: ScalarField = field(repr=False)
    moment_residual: float = 0.0

    def eta(self, r) -> np.ndarray:
        return cutoff(r, self.r0)

    def chi(self, r) -> np.ndarray:
        return self.chi_scale * bump_shape(r, self.r0)


def commutator_correction(
    u: ScalarField,
    surface: LipschitzSurface,
    r0: float,
) -> CorrectionSpec:
    """
    Build eta, chi, the moments gamma and the field Psi.

    gamma_i = int (1 - eta) u |y|^-N (y_i/|y|) dS(y). Psi uses beta = M^-1 gamma with
    M_ik = int chi(|y|) (y_i y_k / |y|^2) |y|^-N dS(y), so that
    int Psi y_k |y|^-(N+1) dS = -gamma_k exactly in the grid quadrature; M is the identity
    when dS = dy on the support of chi.
    """
    grid = u.grid
    n = grid.dim
    if not (grid.r_min <= r0 and 2.0 * r0 <= grid.r_max):
        raise DomainError(f"r0 = {r0:g} and 2 r0 must lie inside the grid")
    pts = grid.points
    rho = np.sqrt(np.sum(pts * pts, axis=-1))
    unit = pts / rho[..., None]
    grad = surface.grad_phi(pts)
    omega = np.sqrt(1.0 + np.sum(grad * grad, axis=-1))
    dS = grid.weights * omega

    # discrete normalization of the bump against dy
    shape = bump_shape(rho, r0)
    target = n / grid.sphere_area
    radial = np.sum(shape * grid.weights / rho ** n) / grid.sphere_area
    if radial <= 0:
        raise DomainError(f"bump around r0 = {r0:g} is not resolved by the grid")
    chi_scale = target / radial
    chi = chi_scale * shape

    eta = cutoff(rho, r0)
    gamma = np.array([
        np.sum((1.0 - eta) * u.values * rho ** -n * unit[..., i] * dS) for i in range(n)
    ])
    moments = np.array([
        [np.sum(chi * unit[..., i] * unit[..., k] * rho ** -n * dS) for k in range(n)] for i in range(n)
    ])
    beta = np.linalg.solve(moments, gamma)
    psi_values = -chi * np.einsum("i,...i->...", beta, unit)
    psi = ScalarField(grid=grid, values=psi_values, name=f"Psi r0={r0:g}")

    check = np.array([np.sum(psi_values * pts[..., k] * rho ** -(n + 1) * dS) for k in range(n)]) + gamma
    scale = max(float(np.linalg.norm(gamma)), 1e-300)
    residual = float(np.max(np.abs(check)) / scale) if np.any(gamma) else float(np.max(np.abs(check)))
    logger.info(f"[Local] r0={r0:g} gamma={np.array2string(gamma, precision=4)} moment residual={residual:.2e}")
    return CorrectionSpec(r0=r0, chi_scale=chi_scale, gamma=gamma, beta=beta, psi=psi, moment_residual=residual)


def commutator_field(
    u: ScalarField,
    surface: LipschitzSurface,
    spec: CorrectionSpec,
    cfg: Optional[OperatorConfig] = None,
    diagnostics: Optional[list] = None,
) -> ScalarField:
    """[S, eta]u + S Psi = S(eta u) - eta S u + S Psi"""
    grid = u.grid
    rho = np.sqrt(np.sum(grid.points ** 2, axis=-1))
    eta = spec.eta(rho)
    eta_u = ScalarField(grid=grid, values=eta * u.values, name=f"eta {u.name}")
    s_eta_u = single_layer(eta_u, surface, cfg, diagnostics)
    s_u = single_layer(u, surface, cfg, diagnostics)
    s_psi = single_layer(spec.psi, surface, cfg, diagnostics)
    values = s_eta_u.values - eta * s_u.values + s_psi.values
    return ScalarField(grid=grid, values=values, name=f"[S,eta] {u.name}")
