# services/geometry.py
"""
Lipschitz graph surfaces in R^{N+1}
- Catalog surfaces selected by string id (flat, tilt:EPS, cone:EPS, wave:EPS, dini:EPS)
- Local Lipschitz modulus Lambda(r) (closed form or random-pair table + cumulative max)
- Weight psi, quotients L_x, L_y, L_xy, difference kernel G(x, y) and its x-gradient
- Pointwise kernel-bound checks

All evaluators are vectorized over leading axes: points have shape (..., N).
The surface is shifted vertically so that it passes through the origin of R^{N+1}
(height(y) = phi(y) - phi(0)); S and T_k only see differences of phi and are unaffected.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from services.errors import ConfigurationError, DegenerateConfigurationError, DomainError

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]

DEGENERATE_THRESHOLD = 1e-12


@dataclass(frozen=True, eq=False)
class LipschitzSurface:
    """Graph of phi over R^N with its local Lipschitz modulus"""
    name: str
    dim: int
    phi: ArrayFn
    grad_phi: ArrayFn
    lambda0: float
    lip_radii: np.ndarray = field(repr=False)
    lip_values: np.ndarray = field(repr=False)
    modulus: Optional[ArrayFn] = field(default=None, repr=False)  # closed-form Lambda(r)
    flat: bool = False

    @property
    def phi0(self) -> float:
        return float(self.phi(np.zeros(self.dim)))

    def height(self, y: np.ndarray) -> np.ndarray:
        return self.phi(y) - self.phi0


# ============================================================
# MODULUS TABLE
# ============================================================

def _ball_points(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=(n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # Half the draws sit near the sphere, where graph slopes of catalog surfaces peak
    radial = radius * rng.uniform(size=n) ** (1.0 / dim)
    radial[: n // 2] = radius * (1.0 - 0.05 * rng.uniform(size=n // 2))
    return direction * radial[:, None]


def tabulate_modulus(
    phi: ArrayFn,
    grad_phi: ArrayFn,
    dim: int,
    seed: int = 0,
    n_points: int = 2000,
    radii: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Empirical Lambda(r) on a log grid of radii.

    For each r the difference quotient is maximized over random pairs in the ball
    |x| <= 2r, together with sampled gradient norms; a cumulative-maximum pass makes
    the table nondecreasing.

    Returns:
        (radii, values)
    """
    if radii is None:
        radii = 2.0 ** (np.arange(-40, 41) / 4.0)
    rng = np.random.default_rng(seed)
    values = np.empty_like(radii)
    for i, r in enumerate(radii):
        x = _ball_points(rng, n_points, dim, 2.0 * r)
        # Close pairs resolve the local slope; far pairs cover the secant
        scale = 2.0 * r * 10.0 ** rng.uniform(-4, 0, size=n_points)
        step = rng.normal(size=(n_points, dim))
        step *= (scale / np.linalg.norm(step, axis=1))[:, None]
        y = x + step
        norm_y = np.linalg.norm(y, axis=1)
        y = np.where((norm_y > 2.0 * r)[:, None], y * (2.0 * r / norm_y)[:, None], y)
        dist = np.linalg.norm(x - y, axis=1)
        ok = dist > 0
        quotient = np.abs(phi(x[ok]) - phi(y[ok])) / dist[ok]
        grad_norm = np.linalg.norm(grad_phi(x), axis=-1)
        values[i] = max(quotient.max(initial=0.0), grad_norm.max(initial=0.0))
    values = np.maximum.accumulate(values)
    return radii, values


# ============================================================
# CATALOG
# ============================================================

def _parse_eps(surface_id: str) -> Tuple[str, float]:
    if ":" not in surface_id:
        return surface_id, 0.0
    kind, raw = surface_id.split(":", 1)
    try:
        eps = float(raw)
    except ValueError as e:
        raise ConfigurationError(f"Bad amplitude in surface id '{surface_id}'") from e
    if eps < 0:
        raise ConfigurationError(f"Negative amplitude in surface id '{surface_id}'")
    return kind, eps


def _constant_table(value: float) -> Tuple[np.ndarray, np.ndarray]:
    radii = 2.0 ** (np.arange(-40, 41) / 4.0)
    return radii, np.full_like(radii, value)


def _table_from_modulus(modulus: ArrayFn) -> Tuple[np.ndarray, np.ndarray]:
    radii = 2.0 ** (np.arange(-40, 41) / 4.0)
    return radii, np.maximum.accumulate(modulus(radii))


def make_surface(surface_id: str, dim: int = 2, seed: int = 0) -> LipschitzSurface:
    """
    Build a catalog surface from its string id.

    Args:
        surface_id: 'flat', 'tilt:EPS', 'cone:EPS', 'wave:EPS' or 'dini:EPS'
        dim: surface dimension N
        seed: seed for the random-pair modulus table (wave only)

    Returns:
        LipschitzSurface
    """
    if dim < 2:
        raise ConfigurationError(f"Surface dimension must be >= 2, got {dim}")
    kind, eps = _parse_eps(surface_id.strip())

    if kind == "flat" or (kind in ("tilt", "cone", "wave", "dini") and eps == 0.0):
        radii, values = _constant_table(0.0)
        return LipschitzSurface(
            name=surface_id, dim=dim,
            phi=lambda x: np.zeros(np.shape(x)[:-1]),
            grad_phi=lambda x: np.zeros(np.shape(x)),
            lambda0=0.0, lip_radii=radii, lip_values=values,
            modulus=lambda r: np.zeros(np.shape(r)), flat=True,
        )

    if kind == "tilt":
        def phi(x):
            return eps * np.asarray(x)[..., 0]

        def grad(x):
            g = np.zeros(np.shape(x))
            g[..., 0] = eps
            return g

        radii, values = _constant_table(eps)
        return LipschitzSurface(
            name=surface_id, dim=dim, phi=phi, grad_phi=grad, lambda0=eps,
            lip_radii=radii, lip_values=values, modulus=lambda r: np.full(np.shape(r), eps),
        )

    if kind == "cone":
        def phi(x):
            x = np.asarray(x)
            return eps * np.sqrt(1.0 + np.sum(x * x, axis=-1))

        def grad(x):
            x = np.asarray(x, dtype=float)
            return eps * x / np.sqrt(1.0 + np.sum(x * x, axis=-1))[..., None]

        # sup of |grad phi| over the convex ball |x| <= 2r
        def modulus(r):
            r = np.asarray(r, dtype=float)
            return 2.0 * eps * r / np.sqrt(1.0 + 4.0 * r * r)

        radii, values = _table_from_modulus(modulus)
        return LipschitzSurface(
            name=surface_id, dim=dim, phi=phi, grad_phi=grad, lambda0=eps,
            lip_radii=radii, lip_values=values, modulus=modulus,
        )

    if kind == "wave":
        def phi(x):
            x = np.asarray(x)
            return eps * np.sin(x[..., 0]) * np.exp(-np.sum(x * x, axis=-1) / 50.0)

        def grad(x):
            x = np.asarray(x, dtype=float)
            envelope = np.exp(-np.sum(x * x, axis=-1) / 50.0)
            s = np.sin(x[..., 0])
            g = -(eps * s * envelope / 25.0)[..., None] * x
            g[..., 0] += eps * np.cos(x[..., 0]) * envelope
            return g

        radii, values = tabulate_modulus(phi, grad, dim, seed=seed)
        logger.info(f"[Geometry] Tabulated modulus for {surface_id}: Lambda0={values[-1]:.5f}")
        return LipschitzSurface(
            name=surface_id, dim=dim, phi=phi, grad_phi=grad, lambda0=float(values[-1]),
            lip_radii=radii, lip_values=values,
        )

    if kind == "dini":
        # phi = eps * x_1 * h(|x|), h(rho) = (2 + log(1 + 1/rho))^-2; Lambda(r)/r is integrable at 0
        def h(rho):
            with np.errstate(divide="ignore"):
                return (2.0 + np.log1p(1.0 / np.maximum(rho, 1e-300))) ** -2.0

        def phi(x):
            x = np.asarray(x, dtype=float)
            rho = np.linalg.norm(x, axis=-1)
            return eps * x[..., 0] * h(rho)

        def grad(x):
            x = np.asarray(x, dtype=float)
            rho = np.maximum(np.linalg.norm(x, axis=-1), 1e-300)
            hv = h(rho)
            dh = 2.0 * hv ** 1.5 / (rho * (1.0 + rho))
            g = (eps * x[..., 0] * dh / rho)[..., None] * x
            g[..., 0] += eps * hv
            return g

        def modulus(r):
            hv = h(2.0 * np.asarray(r, dtype=float))
            return eps * (hv + 2.0 * hv ** 1.5)

        radii, values = _table_from_modulus(modulus)
        return LipschitzSurface(
            name=surface_id, dim=dim, phi=phi, grad_phi=grad, lambda0=0.5 * eps,
            lip_radii=radii, lip_values=values, modulus=modulus,
        )

    raise ConfigurationError(f"Unknown surface id '{surface_id}'")


# ============================================================
# POINTWISE QUANTITIES
# ============================================================

def lip_modulus(surface: LipschitzSurface, r) -> np.ndarray:
    """Lambda(r): closed form when available, else log-linear table interpolation, clamped to Lambda0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("lip_modulus requires r > 0")
    if surface.modulus is not None:
        value = surface.modulus(r)
    else:
        value = np.interp(np.log(r), np.log(surface.lip_radii), surface.lip_values)
    return np.minimum(value, surface.lambda0)


def surface_eval(surface: LipschitzSurface, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Evaluate the graph at y.

    Returns:
        (phi, grad, omega, Phi) with omega = sqrt(1 + |grad|^2) and Phi = (y, phi)
    """
    y = np.asarray(y, dtype=float)
    phi = surface.phi(y)
    grad = surface.grad_phi(y)
    omega = np.sqrt(1.0 + np.sum(grad * grad, axis=-1))
    Phi = np.concatenate([y, np.asarray(phi)[..., None]], axis=-1)
    return phi, grad, omega, Phi


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def psi_weight(surface: LipschitzSurface, y) -> np.ndarray:
    """psi(y) = |y|^{N+1} omega(y) (|y|^2 + phi(y)^2)^{-(N+1)/2}"""
    y = np.asarray(y, dtype=float)
    ny = _norm(y)
    if np.any(ny == 0):
        raise DomainError("psi_weight is undefined at y = 0")
    if surface.flat:
        return np.ones_like(ny)
    n = surface.dim
    _, _, omega, _ = surface_eval(surface, y)
    ly = surface.height(y) / ny
    return omega * (1.0 + ly * ly) ** (-(n + 1) / 2.0)


def l_quotients(surface: LipschitzSurface, x, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(L_x, L_y, L_xy) = (phi(x)/|x|, phi(y)/|y|, (phi(x) - phi(y))/|x - y|)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny, nxy = _norm(x), _norm(y), _norm(x - y)
    if np.any(nx == 0) or np.any(ny == 0):
        raise DomainError("l_quotients requires x != 0 and y != 0")
    if np.any(nxy == 0):
        raise DomainError("l_quotients requires x != y")
    hx, hy = surface.height(x), surface.height(y)
    return hx / nx, hy / ny, (hx - hy) / nxy


def diff_kernel(surface: LipschitzSurface, x, y) -> np.ndarray:
    """G(x, y) = psi(y)|x - y|^{-(N-1)} - omega(y)|Phi(x) - Phi(y)|^{-(N-1)}"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = _norm(x - y)
    if np.any(d == 0):
        raise DomainError("diff_kernel requires x != y")
    n = surface.dim
    if surface.flat:
        return np.zeros_like(d)
    _, _, omega, _ = surface_eval(surface, y)
    dphi = surface.phi(x) - surface.phi(y)
    big = np.sqrt(d * d + dphi * dphi)
    return psi_weight(surface, y) * d ** (1 - n) - omega * big ** (1 - n)


def diff_kernel_grad(surface: LipschitzSurface, x, y, k: int) -> np.ndarray:
    """
    d/dx_k G(x, y), k = 1..N, in closed form:

        (1-N) psi(y) / |x-y|^{N+1} * [ (x_k - y_k) - (x_k - y_k + d_k phi(x)(phi(x) - phi(y))) / (1 + a)^{(N+1)/2} ]

    with a(x, y) = (L_xy^2 - L_y^2) / (1 + L_y^2).
    """
    n = surface.dim
    if not 1 <= k <= n:
        raise DomainError(f"axis index k must be in 1..{n}, got {k}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lx, ly, lxy = l_quotients(surface, x, y)
    if surface.flat:
        return np.zeros_like(lx)
    a = (lxy * lxy - ly * ly) / (1.0 + ly * ly)
    if np.any(1.0 + a <= DEGENERATE_THRESHOLD):
        raise DegenerateConfigurationError("1 + a(x, y) <= 1e-12")
    d = _norm(x - y)
    dk = x[..., k - 1] - y[..., k - 1]
    grad_x = surface.grad_phi(x)[..., k - 1]
    dphi = surface.phi(x) - surface.phi(y)
    bracket = dk - (dk + grad_x * dphi) / (1.0 + a) ** ((n + 1) / 2.0)
    return (1 - n) * psi_weight(surface, y) / d ** (n + 1) * bracket


def kernel_gradient(surface: LipschitzSurface, x, y) -> np.ndarray:
    """Full x-gradient of G, shape (..., N)"""
    return np.stack([diff_kernel_grad(surface, x, y, k) for k in range(1, surface.dim + 1)], axis=-1)


# ============================================================
# BOUND CHECKS
# ============================================================

@dataclass
class BoundReport:
    """Max ratio lhs/rhs per inequality over sampled admissible pairs"""
    surface: str
    n_samples: int
    seed: int
    max_ratios: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    skipped: int = 0
    quotient_violations: int = 0
    scaling_statistic: float = 0.0  # max |G| |x-y|^{N-1} / psi(y)
    labeling_holds: Dict[str, bool] = field(default_factory=dict)

    @property
    def all_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.max_ratios.values())


def sample_pairs(
    rng: np.random.Generator, n: int, dim: int, regime: str
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Random pairs in a magnitude regime.

    regime: 'x_big' (|x| > 2|y|), 'y_big' (|y| > 2|x|) or 'comparable' (|y|/|x| in [1/2, 2])
    """
    def directions(m):
        v = rng.normal(size=(m, dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    base = 2.0 ** rng.uniform(-4.0, 4.0, size=n)
    if regime == "x_big":
        ratio = 2.0 ** rng.uniform(-6.0, -1.0 - 1e-9, size=n)
        nx, ny = base, base * ratio
    elif regime == "y_big":
        ratio = 2.0 ** rng.uniform(-6.0, -1.0 - 1e-9, size=n)
        ny, nx = base, base * ratio
    elif regime == "comparable":
        nx, ny = base, base * 2.0 ** rng.uniform(-1.0, 1.0, size=n)
    else:
        raise ConfigurationError(f"Unknown regime '{regime}'")
    return directions(n) * nx[:, None], directions(n) * ny[:, None]


def _ratio_max(lhs: np.ndarray, rhs: np.ndarray) -> Tuple[float, int]:
    """max lhs/rhs with 0/0 := 0; pairs with lhs > 0 and rhs == 0 are skipped"""
    lhs = np.abs(lhs)
    zero_both = (lhs <= 0) & (rhs <= 0)
    degenerate = (lhs > 0) & (rhs <= 0)
    ok = ~(zero_both | degenerate)
    ratio = np.zeros_like(lhs)
    ratio[ok] = lhs[ok] / rhs[ok]
    return float(ratio.max(initial=0.0)), int(degenerate.sum())


def quotient_bound_violations(surface: LipschitzSurface, x: np.ndarray, y: np.ndarray, atol: float = 1e-12) -> int:
    """Count pairs violating |L_x| <= Lambda(|x|/2), |L_y| <= Lambda(|y|/2), |L_xy| <= max(...)"""
    lx, ly, lxy = l_quotients(surface, x, y)
    lam_x = lip_modulus(surface, _norm(x) / 2.0)
    lam_y = lip_modulus(surface, _norm(y) / 2.0)
    bad = (
        (np.abs(lx) > lam_x + atol)
        | (np.abs(ly) > lam_y + atol)
        | (np.abs(lxy) > np.maximum(lam_x, lam_y) + atol)
    )
    return int(bad.sum())


def verify_kernel_bounds(surface: LipschitzSurface, n_samples: int, seed: int) -> BoundReport:
    """
    Sample admissible pairs and report max lhs/rhs for the quotient-difference and
    difference-kernel inequalities.

    Both labelings of the quotient-difference regimes are tested: the bound
    Lambda(|x|/2)^2 on |x| > 2|y| (derivation constant 16) and on |x| < 2|y|, and the
    bound Lambda(|y|/2)^2 |x|/|y| (constant 6) or Lambda(|y|)^2 |x|/|y| on |y| > 2|x|.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = surface.dim
    report = BoundReport(surface=surface.name, n_samples=n_samples, seed=seed)
    per_regime = max(1, n_samples // 3)

    pairs = {regime: sample_pairs(rng, per_regime, n, regime) for regime in ("x_big", "y_big", "comparable")}

    def record(name: str, lhs, rhs):
        value, skipped = _ratio_max(lhs, rhs)
        report.max_ratios[name] = value
        report.counts[name] = int(np.size(lhs)) - skipped
        report.skipped += skipped

    scaling = 0.0
    for regime, (x, y) in pairs.items():
        keep = _norm(x - y) > 0
        x, y = x[keep], y[keep]
        report.quotient_violations += quotient_bound_violations(surface, x, y)
        lx, ly, lxy = l_quotients(surface, x, y)
        diff_sq = lxy * lxy - ly * ly
        nx, ny, d = _norm(x), _norm(y), _norm(x - y)
        lam_xh = lip_modulus(surface, nx / 2.0)
        lam_yh = lip_modulus(surface, ny / 2.0)
        lam_y = lip_modulus(surface, ny)

        if regime == "x_big":
            record("quotient_diff|x>2y|lambda(x/2)^2", diff_sq, lam_xh ** 2)
        if regime in ("y_big", "comparable"):
            record(f"quotient_diff|x<2y|lambda(x/2)^2|{regime}", diff_sq, lam_xh ** 2)
        if regime == "y_big":
            record("quotient_diff|y>2x|lambda(y/2)^2*x/y", diff_sq, lam_yh ** 2 * nx / ny)
            record("quotient_diff|y>2x|lambda(y)^2*x/y", diff_sq, lam_y ** 2 * nx / ny)

        g = diff_kernel(surface, x, y)
        psi = psi_weight(surface, y)
        record(f"kernel|G|<=psi*lxy^2|{regime}", g, psi * lxy * lxy * d ** (1 - n))
        record(f"kernel|G|<=psi*(lxy^2+ly^2)|{regime}", g, psi * (lxy * lxy + ly * ly) * d ** (1 - n))
        if not surface.flat:
            scaling = max(scaling, float(np.max(np.abs(g) * d ** (n - 1) / psi, initial=0.0)))

        admissible = diff_sq >= -0.5
        if np.any(admissible):
            xa, ya = x[admissible], y[admissible]
            grad = kernel_gradient(surface, xa, ya)
            rhs = psi[admissible] / d[admissible] ** n * (
                np.abs(diff_sq[admissible]) + lam_xh[admissible] * np.abs(lxy[admissible])
            )
            record(f"kernel|dG||{regime}", np.max(np.abs(grad), axis=-1), rhs)

    report.scaling_statistic = scaling
    derivation = (
        report.max_ratios.get("quotient_diff|x>2y|lambda(x/2)^2", 0.0) <= 16.0
        and report.max_ratios.get("quotient_diff|y>2x|lambda(y/2)^2*x/y", 0.0) <= 6.0
    )
    statement = (
        report.max_ratios.get("quotient_diff|x<2y|lambda(x/2)^2|y_big", 0.0) <= 16.0
        and report.max_ratios.get("quotient_diff|x<2y|lambda(x/2)^2|comparable", 0.0) <= 16.0
        and report.max_ratios.get("quotient_diff|y>2x|lambda(y)^2*x/y", 0.0) <= 6.0
    )
    report.labeling_holds = {"derivation": bool(derivation), "statement": bool(statement)}
    logger.info(
        f"[Geometry] Kernel bounds for {surface.name}: {len(report.max_ratios)} inequalities, "
        f"skipped={report.skipped}, labelings={report.labeling_holds}"
    )
    return report


def fd_gradient_check(surface: LipschitzSurface, n_samples: int, seed: int, rel_step: float = 1e-5) -> float:
    """
    Max relative error between diff_kernel_grad and centred differences of diff_kernel,
    step h = rel_step * |x - y|. Error is relative to |grad_x G|.
    """
    rng = np.random.default_rng(seed)
    n = surface.dim
    x, y = sample_pairs(rng, n_samples, n, "comparable")
    keep = _norm(x - y) > 1e-3 * _norm(x)
    x, y = x[keep], y[keep]
    exact = kernel_gradient(surface, x, y)
    h = rel_step * _norm(x - y)
    fd = np.empty_like(exact)
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        step = h[:, None] * e
        fd[:, k] = (diff_kernel(surface, x + step, y) - diff_kernel(surface, x - step, y)) / (2.0 * h)
    scale = np.linalg.norm(exact, axis=-1)
    ok = scale > 0
    if not np.any(ok):
        return float(np.max(np.abs(fd), initial=0.0))
    err = np.linalg.norm(fd - exact, axis=-1)[ok] / scale[ok]
    return float(err.max())
