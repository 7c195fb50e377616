# services/operators.py
"""
Integral operators on the annular grid (N = 2)
- Riesz potential I, weighted I^psi, single layer S (weakly singular)
- T_k, T_{N+1}, R_k, R_k^psi (principal value, Richardson in the exclusion radius)
- Gradient of S, the flat solution operator R f = c_N/(N-1) sum_k R_k d_k f
- Bound-shape helpers for the potential and gradient estimates

Each application = midpoint far field (dense, chunked on a thread pool)
                 + cached sparse near-field correction
                 + inner disc |y| < r_min (closed flat form + quadrature of the remainder)
                 + outer monopole tail (weakly singular kernels only)
"""
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special
from scipy.integrate import trapezoid

from config import settings
from models.run_models import OperatorConfig
from services.errors import ConfigurationError, MembershipError
from services.geometry import LipschitzSurface, lip_modulus
from services.grid import (
    AnnularGrid,
    ScalarField,
    SeminormProfile,
    gradient_field,
    log_integral,
    q_weight,
    radial_mean,
    radial_means,
    seminorm_profile,
    vector_magnitude,
    y1p_norm,
)
from services.nearfield import (
    NearField,
    PatchCoefficients,
    assemble_near_field,
    build_patch_rule,
    flag_disagreement,
    gauss_legendre,
    patch_coefficients,
)

logger = logging.getLogger(__name__)

WEAK_FAMILIES = ("I", "Ipsi", "S")
PV_FAMILIES = ("R", "Rpsi", "T")
RIESZ_CONVENTION = "R_k f = c_N p.v. int (x_k - y_k)|x - y|^{-N-1} f(y) dy"


def c_n(dim: int) -> float:
    """c_N = Gamma((N+1)/2) / pi^{(N+1)/2}"""
    return float(special.gamma((dim + 1) / 2.0) / np.pi ** ((dim + 1) / 2.0))


# ============================================================
# KERNELS
# ============================================================

@dataclass(frozen=True)
class Kernel:
    family: str
    k: int = 0

    def __post_init__(self):
        if self.family not in WEAK_FAMILIES + PV_FAMILIES:
            raise ConfigurationError(f"Unknown kernel family '{self.family}'")

    @property
    def principal_value(self) -> bool:
        return self.family in PV_FAMILIES

    @property
    def needs_surface(self) -> bool:
        return self.family not in ("I", "R")

    @property
    def label(self) -> str:
        return self.family if not self.k else f"{self.family}{self.k}"

    @classmethod
    def parse(cls, kind: str, dim: int = 2) -> "Kernel":
        """'T1', 'T3' (= T_{N+1}), 'R2', 'Rpsi1', 'I', 'Ipsi', 'S'"""
        kind = kind.strip()
        for family in ("Rpsi", "Ipsi", "R", "T", "I", "S"):
            if kind.startswith(family):
                rest = kind[len(family):]
                if family in WEAK_FAMILIES:
                    if not rest:
                        return cls(family)
                    break
                if rest.isdigit():
                    k = int(rest)
                    top = dim + 1 if family == "T" else dim
                    if 1 <= k <= top:
                        return cls(family, k)
        raise ConfigurationError(f"Unknown operator kind '{kind}'")


def _surface_terms(surface: LipschitzSurface, y: np.ndarray):
    """(phi, omega, psi) at points y"""
    phi = surface.phi(y)
    grad = surface.grad_phi(y)
    omega = np.sqrt(1.0 + np.sum(grad * grad, axis=-1))
    ny = np.sqrt(np.sum(y * y, axis=-1))
    ly = (phi - surface.phi0) / ny
    psi = omega * (1.0 + ly * ly) ** -1.5
    return phi, omega, psi


def point_kernel(kernel: Kernel, surface: Optional[LipschitzSurface]) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Kernel K(x, y) broadcasting x against y; diagonal values are not defined"""
    fam, k = kernel.family, kernel.k
    cn = c_n(2)
    flat = surface is None or surface.flat

    def fn(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        diff = x - y
        d2 = np.sum(diff * diff, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            if fam == "I" or (flat and fam in ("Ipsi", "S")):
                return d2 ** -0.5
            if fam == "R" or (flat and fam == "Rpsi"):
                return cn * diff[..., k - 1] * d2 ** -1.5
            if flat and fam == "T":
                if k > 2:
                    return np.zeros(d2.shape)
                return diff[..., k - 1] * d2 ** -1.5
            phi_y, omega_y, psi_y = _surface_terms(surface, np.broadcast_to(y, diff.shape))
            if fam == "Ipsi":
                return psi_y * d2 ** -0.5
            if fam == "Rpsi":
                return cn * diff[..., k - 1] * psi_y * d2 ** -1.5
            dphi = surface.phi(x) - phi_y
            big2 = d2 + dphi * dphi
            if fam == "S":
                return omega_y * big2 ** -0.5
            numerator = diff[..., k - 1] if k <= 2 else dphi
            return numerator * omega_y * big2 ** -1.5

    return fn


def _flat_counterpart(kernel: Kernel) -> Tuple[Optional[Kernel], float]:
    """Flat kernel with a closed-form disc integral, and its multiplier"""
    if kernel.family in WEAK_FAMILIES:
        return Kernel("I"), 1.0
    if kernel.family in ("R", "Rpsi"):
        return Kernel("R", kernel.k), 1.0
    if kernel.k <= 2:
        return Kernel("R", kernel.k), 1.0 / c_n(2)
    return None, 0.0


# ============================================================
# DISC POTENTIALS
# ============================================================

def disc_potential(r, a: float) -> np.ndarray:
    """V(r) = int_{|y|<a} dy / |x - y| for |x| = r (N = 2)"""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    inside = r < a
    m = (r[inside] / a) ** 2
    out[inside] = 4.0 * a * special.ellipe(m)
    q = (a / np.maximum(r[~inside], a)) ** 2
    rr = r[~inside]
    with np.errstate(invalid="ignore"):
        outer = 4.0 * rr * (special.ellipe(q) - (1.0 - q) * special.ellipk(q))
    out[~inside] = np.where(q >= 1.0, 4.0 * a, outer)
    return out


def disc_potential_slope(r, a: float) -> np.ndarray:
    """dV/dr: 4a(E(m) - K(m))/r inside (m = r^2/a^2), 4(E(q) - K(q)) outside (q = a^2/r^2)"""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = (r > 0) & (r < a)
    m = (r[inside] / a) ** 2
    out[inside] = 4.0 * a * (special.ellipe(m) - special.ellipk(m)) / r[inside]
    outside = r > a
    q = (a / r[outside]) ** 2
    out[outside] = 4.0 * (special.ellipe(q) - special.ellipk(q))
    return out


def _flat_disc_integral(kernel: Kernel, x: np.ndarray, a: float) -> np.ndarray:
    """int_{|y|<a} K_flat(x, y) dy in closed form"""
    r = np.sqrt(np.sum(x * x, axis=-1))
    if kernel.family == "I":
        return disc_potential(r, a)
    slope = disc_potential_slope(r, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        direction = np.where(r > 0, x[..., kernel.k - 1] / np.where(r > 0, r, 1.0), 0.0)
    return -c_n(2) * slope * direction


# ============================================================
# CACHE
# ============================================================

@dataclass(eq=False)
class KernelData:
    near: NearField
    inner: np.ndarray  # per-target weight of the innermost-shell mean


_CACHE: Dict[tuple, KernelData] = {}
_CACHE_LOCK = threading.Lock()


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


def _chunks(n: int, size: int) -> List[np.ndarray]:
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def _run_chunks(fn, chunks):
    workers = settings.worker_count
    if workers <= 1 or len(chunks) <= 1:
        return [fn(rows) for rows in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _inner_disc_weights(kernel: Kernel, surface: Optional[LipschitzSurface], grid: AnnularGrid, targets: np.ndarray) -> np.ndarray:
    a = grid.r_min
    flat_kernel, factor = _flat_counterpart(kernel)
    total = np.zeros(targets.shape[0])
    if flat_kernel is not None:
        total += factor * _flat_disc_integral(flat_kernel, targets, a)
    if kernel.needs_surface and surface is not None and not surface.flat:
        # remainder K - K_flat is O(Lambda^2) smaller; a product rule is enough
        rad, w_rad = gauss_legendre(0.0, a, 16)
        ang = 2.0 * np.pi * (np.arange(64) + 0.5) / 64
        y = (rad[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)[None, :, :]).reshape(-1, 2)
        w = (w_rad * rad)[:, None].repeat(64, axis=1).ravel() * (2.0 * np.pi / 64)
        full = point_kernel(kernel, surface)
        flat_fn = point_kernel(flat_kernel, None) if flat_kernel is not None else None

        def chunk(rows):
            x = targets[rows][:, None, :]
            vals = full(x, y[None, :, :])
            if flat_fn is not None:
                vals = vals - factor * flat_fn(x, y[None, :, :])
            return vals @ w

        chunks = _chunks(targets.shape[0], settings.CHUNK_SIZE)
        for rows, part in zip(chunks, _run_chunks(chunk, chunks)):
            total[rows] += part
    return total


def kernel_data(kernel: Kernel, surface: Optional[LipschitzSurface], grid: AnnularGrid, cfg: OperatorConfig) -> KernelData:
    """Near-field correction and inner-disc weights, built once per (grid, surface, kernel, cfg)"""
    surf = surface if kernel.needs_surface and surface is not None and not surface.flat else None
    key = (grid, surf, kernel, cfg.pv_epsilon_factor, cfg.pv_extrapolation_levels, cfg.near_singular_refinement)
    with _CACHE_LOCK:
        cached = _CACHE.get(key)
    if cached is not None:
        return cached

    logger.info(f"[Operators {kernel.label}] building near field on {grid.describe()}")
    rule = build_patch_rule(grid, cfg, kernel.principal_value)
    fn = point_kernel(kernel, surf)
    n = grid.n_radial * grid.n_dir
    chunks = _chunks(n, max(16, settings.CHUNK_SIZE // 4))

    def build(rows) -> Tuple[np.ndarray, PatchCoefficients]:
        return rows, _patch(rule, grid, rows, fn)

    blocks = _run_chunks(build, chunks)
    near = assemble_near_field(rule, grid, blocks)
    inner = _inner_disc_weights(kernel, surf, grid, grid.points.reshape(-1, 2))
    data = KernelData(near=near, inner=inner)
    with _CACHE_LOCK:
        _CACHE[key] = data
    logger.info(f"[Operators {kernel.label}] near field ready: nnz={near.matrix.nnz}")
    return data


def _patch(rule, grid, rows, fn) -> PatchCoefficients:
    with np.errstate(divide="ignore", invalid="ignore"):
        return patch_coefficients(rule, grid, rows, fn)


# ============================================================
# APPLICATION
# ============================================================

@dataclass
class OperatorDiagnostics:
    kernel: str
    flagged_targets: int = 0
    inner_tail: float = 0.0
    outer_tail: float = 0.0
    finite_proxy: bool = True
    sign_convention: str = RIESZ_CONVENTION


def _far_field(fn, grid: AnnularGrid, u_w: np.ndarray) -> np.ndarray:
    pts = grid.points.reshape(-1, 2)
    n = pts.shape[0]
    out = np.empty(n)

    def chunk(rows):
        with np.errstate(divide="ignore", invalid="ignore"):
            K = fn(pts[rows][:, None, :], pts[None, :, :])
        K[np.arange(rows.size), rows] = 0.0
        out[rows] = K @ u_w
        return rows.size

    _run_chunks(chunk, _chunks(n, settings.CHUNK_SIZE))
    return out


def outer_monopole(u: ScalarField) -> float:
    """2 pi u_bar(r_max) r_max / (beta - 1) for a radial mean decaying like rho^-beta, beta > 1"""
    grid = u.grid
    J = grid.radial_per_octave
    means = radial_means(u)
    last, prev = means[-1], means[-1 - J]
    if last == 0.0 or prev == 0.0 or np.sign(last) != np.sign(prev):
        return 0.0
    beta = math.log(prev / last) / math.log(2.0)
    if beta <= 1.0:
        logger.warning(f"[Operators] outer decay rate {beta:.3f} <= 1, monopole tail skipped")
        return 0.0
    rho_last = grid.radii[-1]
    return float(2.0 * np.pi * last * rho_last ** beta * grid.r_max ** (1.0 - beta) / (beta - 1.0))


def apply_operator(
    u: ScalarField,
    kernel: Kernel,
    surface: Optional[LipschitzSurface],
    cfg: OperatorConfig,
) -> Tuple[ScalarField, OperatorDiagnostics]:
    """Apply one kernel to a sampled density"""
    grid = u.grid
    if grid.dim != 2:
        raise ConfigurationError("operators are implemented for N = 2")
    if kernel.needs_surface and surface is None:
        raise ConfigurationError(f"kernel {kernel.label} needs a surface")
    diag = OperatorDiagnostics(kernel=kernel.label)
    surf = surface if kernel.needs_surface else None
    if kernel.family == "T" and kernel.k == 3 and (surf is None or surf.flat):
        return ScalarField(grid=grid, values=np.zeros(grid.shape), name=f"{kernel.label} {u.name}"), diag

    data = kernel_data(kernel, surf, grid, cfg)
    fn = point_kernel(kernel, surf if surf is not None and not surf.flat else None)
    u_flat = u.values.ravel()
    out = _far_field(fn, grid, (u.values * grid.weights).ravel())
    out += data.near.matrix @ u_flat

    if cfg.tail_correction:
        inner = data.inner * radial_mean(u, grid.radii[0])
        out += inner
        diag.inner_tail = float(np.max(np.abs(inner), initial=0.0))
        if kernel.family in WEAK_FAMILIES:
            tail = outer_monopole(u)
            out += tail
            diag.outer_tail = abs(tail)

    if kernel.principal_value:
        flags = flag_disagreement(data.near.level_values(u_flat), float(np.max(np.abs(out), initial=0.0)))
        diag.flagged_targets = int(flags.sum())
        if diag.flagged_targets:
            logger.warning(f"[PV {kernel.label}] {diag.flagged_targets} targets with disagreeing extrapolation levels")
    logger.debug(f"[Operators {kernel.label}] applied to '{u.name}'")
    return ScalarField(grid=grid, values=out.reshape(grid.shape), name=f"{kernel.label} {u.name}"), diag


def _collect(diagnostics: Optional[list], diag: OperatorDiagnostics):
    if diagnostics is not None:
        diagnostics.append(diag)


def riesz_potential(
    u: ScalarField,
    weighted: bool = False,
    surface: Optional[LipschitzSurface] = None,
    cfg: Optional[OperatorConfig] = None,
    diagnostics: Optional[list] = None,
) -> ScalarField:
    """I u, or I^psi u = I(psi u) when weighted"""
    cfg = cfg or OperatorConfig()
    if weighted and surface is None:
        raise ConfigurationError("weighted Riesz potential needs a surface")
    result, diag = apply_operator(u, Kernel("Ipsi" if weighted else "I"), surface, cfg)
    _collect(diagnostics, diag)
    return result


def single_layer(
    u: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    diagnostics: Optional[list] = None,
) -> ScalarField:
    """S u with kernel omega(y) |Phi(x) - Phi(y)|^{-(N-1)}"""
    result, diag = apply_operator(u, Kernel("S"), surface, cfg or OperatorConfig())
    _collect(diagnostics, diag)
    return result


def finiteness_proxy(u: ScalarField, p: float = 2.0) -> bool:
    """int Q_{N,0}(rho) N_p(u; rho) drho/rho finite on the truncated grid"""
    prof = seminorm_profile(u, p)
    est = log_integral(prof.radii, q_weight(u.grid.dim, 0.0, prof.radii) * prof.values,
                       u.grid.radial_per_octave, label="p.v. proxy")
    return est.finite


def pv_transform(
    u: ScalarField,
    kind: str,
    surface: Optional[LipschitzSurface] = None,
    cfg: Optional[OperatorConfig] = None,
    diagnostics: Optional[list] = None,
) -> ScalarField:
    """T_k, T_{N+1}, R_k or R_k^psi applied to u"""
    kernel = Kernel.parse(kind, u.grid.dim)
    if not kernel.principal_value:
        raise ConfigurationError(f"'{kind}' is not a principal-value kernel")
    proxy = finiteness_proxy(u)
    if not proxy:
        logger.warning(f"[PV {kernel.label}] density fails the finiteness proxy on the truncated grid")
    result, diag = apply_operator(u, kernel, surface, cfg or OperatorConfig())
    diag.finite_proxy = proxy
    _collect(diagnostics, diag)
    return result


def single_layer_grad(
    u: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    diagnostics: Optional[list] = None,
) -> List[ScalarField]:
    """d_k S u = (1 - N)(T_k u + d_k phi T_{N+1} u)"""
    grid = u.grid
    n = grid.dim
    t_top = pv_transform(u, f"T{n + 1}", surface, cfg, diagnostics)
    grad_phi = surface.grad_phi(grid.points)
    out = []
    for k in range(1, n + 1):
        t_k = pv_transform(u, f"T{k}", surface, cfg, diagnostics)
        values = (1 - n) * (t_k.values + grad_phi[..., k - 1] * t_top.values)
        out.append(ScalarField(grid=grid, values=values, name=f"d{k} S {u.name}"))
    return out


def r_solve(
    f: ScalarField,
    cfg: Optional[OperatorConfig] = None,
    p: float = 2.0,
    membership_tol: float = 1e-2,
    diagnostics: Optional[list] = None,
) -> ScalarField:
    """R f = c_N/(N-1) sum_k R_k d_k f, the flat solution of I u = f"""
    grid = f.grid
    n = grid.dim
    grads = gradient_field(f)
    est = y1p_norm(f, grads, p)
    mean = radial_mean(f, grid.r_max)
    peak = max(f.sup(), 1e-300)
    if not est.finite or abs(mean) > membership_tol * peak:
        raise MembershipError(
            f"'{f.name}' fails the Y^(1,p) check: norm={est.value:.4g}, mean at r_max={mean:.4g}"
        )
    total = np.zeros(grid.shape)
    for k, g in enumerate(grads, start=1):
        total += pv_transform(g, f"R{k}", None, cfg, diagnostics).values
    return ScalarField(grid=grid, values=c_n(n) / (n - 1) * total, name=f"R {f.name}")


def evaluate_off_grid(
    u: ScalarField,
    points: np.ndarray,
    kind: str = "I",
    surface: Optional[LipschitzSurface] = None,
) -> np.ndarray:
    """Midpoint far field plus the inner disc at points away from the nodes (for example x = 0)"""
    grid = u.grid
    kernel = Kernel.parse(kind, grid.dim)
    surf = surface if kernel.needs_surface and surface is not None and not surface.flat else None
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    fn = point_kernel(kernel, surf)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = fn(pts[:, None, :], grid.points.reshape(1, -1, 2))
    out = K @ (u.values * grid.weights).ravel()
    out += _inner_disc_weights(kernel, surf, grid, pts) * radial_mean(u, grid.radii[0])
    return out


# ============================================================
# BOUND SHAPES
# ============================================================

def _profile_integral(profile: SeminormProfile, weight: Callable[[np.ndarray], np.ndarray]) -> float:
    t = np.log(profile.radii)
    return float(trapezoid(weight(profile.radii) * profile.values, t))


def potential_bound_rhs(profile: SeminormProfile, radii: Sequence[float], dim: int = 2) -> np.ndarray:
    """r int Q_{N,1}(rho/r) N_p(u; rho) drho/rho"""
    return np.array([r * _profile_integral(profile, lambda rho: q_weight(dim, 1.0, rho / r)) for r in radii])


def gradient_bound_rhs(profile: SeminormProfile, radii: Sequence[float], dim: int = 2) -> np.ndarray:
    """int Q_{N,0}(rho/r) N_p(u; rho) drho/rho"""
    return np.array([_profile_integral(profile, lambda rho: q_weight(dim, 0.0, rho / r)) for r in radii])


def fit_constant(lhs: np.ndarray, rhs: np.ndarray) -> float:
    """max lhs/rhs over points with rhs > 0 (0 when lhs vanishes there)"""
    lhs = np.abs(np.asarray(lhs, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    ok = rhs > 0
    if not np.any(ok):
        return 0.0 if not np.any(lhs > 0) else math.inf
    return float(np.max(lhs[ok] / rhs[ok]))


def interior_radii(grid: AnnularGrid, margin_octaves: int = 2) -> np.ndarray:
    """Dyadic radii at least `margin_octaves` away from both grid ends"""
    radii = grid.dyadic_radii
    lo = grid.r_min * 2.0 ** margin_octaves
    hi = grid.r_max * 2.0 ** -(margin_octaves + 1)
    return radii[(radii >= lo * (1 - 1e-9)) & (radii <= hi * (1 + 1e-9))]


def gradient_mismatch(
    approx: Sequence[ScalarField],
    reference: Sequence[ScalarField],
    radii: Sequence[float],
    p: float = 2.0,
) -> float:
    """max_r N_p(|approx - reference|; r) / max_r N_p(|reference|; r) over the given radii"""
    diff = seminorm_profile(vector_magnitude([a - b for a, b in zip(approx, reference)]), p)
    ref = seminorm_profile(vector_magnitude(list(reference)), p)
    scale = max((ref.at(r) for r in radii), default=0.0)
    err = max((diff.at(r) for r in radii), default=0.0)
    return err if scale == 0.0 else err / scale


# ============================================================
# EMPIRICAL OPERATOR NORMS
# ============================================================

@dataclass
class OperatorNormReport:
    r: float
    n_trials: int
    difference_ratio: Dict[str, float] = field(default_factory=dict)  # surface -> max ratio
    top_ratio: Dict[str, float] = field(default_factory=dict)
    moduli: Dict[str, float] = field(default_factory=dict)  # surface -> Lambda(r)
    difference_exponent: Optional[float] = None
    top_exponent: Optional[float] = None


def random_local_field(grid: AnnularGrid, r: float, rng: np.random.Generator, name: str = "") -> ScalarField:
    """Random smooth field supported in |x| < 2r"""
    centres = rng.uniform(-r, r, size=(4, grid.dim))
    amps = rng.normal(size=4)
    width = r / 2.0

    def fn(x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for c, amp in zip(centres, amps):
            total += amp * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2.0 * width ** 2))
        rho2 = np.sum(x * x, axis=-1) / (4.0 * r * r)
        return total * np.clip(1.0 - rho2, 0.0, None) ** 3

    return ScalarField.from_function(grid, fn, name=name or "random local")


def lp_norm(u: ScalarField, p: float = 2.0, radius: Optional[float] = None) -> float:
    grid = u.grid
    vals = np.abs(u.values) ** p * grid.weights
    if radius is not None:
        vals = vals[grid.radii < radius]
    return float(vals.sum() ** (1.0 / p))


def empirical_operator_norms(
    surfaces: Sequence[LipschitzSurface],
    grid: AnnularGrid,
    r: float,
    n_trials: int,
    cfg: Optional[OperatorConfig] = None,
    seed: int = 0,
    p: float = 2.0,
) -> OperatorNormReport:
    """
    Max ratios ||(T_k - c_N^-1 R_k^psi) u||_{L^p(B_r)} / ||u||_p and ||T_{N+1} u||_{L^p(B_r)} / ||u||_p
    over random fields supported in B(0; 2r), with log-log fits in Lambda(r) across surfaces.
    """
    cfg = cfg or OperatorConfig()
    rng = np.random.default_rng(seed)
    fields = [random_local_field(grid, r, rng, name=f"trial {i}") for i in range(n_trials)]
    inv_cn = 1.0 / c_n(grid.dim)
    report = OperatorNormReport(r=r, n_trials=n_trials)
    for surface in surfaces:
        diff_max, top_max = 0.0, 0.0
        for u in fields:
            norm_u = lp_norm(u, p)
            if norm_u == 0:
                continue
            for k in range(1, grid.dim + 1):
                t_k = pv_transform(u, f"T{k}", surface, cfg)
                r_k = pv_transform(u, f"Rpsi{k}", surface, cfg)
                diff = t_k - r_k * inv_cn
                diff_max = max(diff_max, lp_norm(diff, p, radius=r) / norm_u)
            t_top = pv_transform(u, f"T{grid.dim + 1}", surface, cfg)
            top_max = max(top_max, lp_norm(t_top, p, radius=r) / norm_u)
        report.difference_ratio[surface.name] = diff_max
        report.top_ratio[surface.name] = top_max
        report.moduli[surface.name] = float(lip_modulus(surface, r)) if not surface.flat else 0.0
        logger.info(f"[Operators] norms on {surface.name}: difference={diff_max:.3e} top={top_max:.3e}")

    lam = np.array([report.moduli[s.name] for s in surfaces])
    usable = lam > 0
    if usable.sum() >= 2:
        x = np.log(lam[usable])
        for attr, source in (("difference_exponent", report.difference_ratio), ("top_exponent", report.top_ratio)):
            y = np.array([source[s.name] for s, ok in zip(surfaces, usable) if ok])
            if np.all(y > 0):
                setattr(report, attr, float(np.polyfit(x, np.log(y), 1)[0]))
    return report
