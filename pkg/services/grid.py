# services/grid.py
"""
Log-radial x angular grid on R^N minus the origin
- Shell j spans [r_min 2^{j/J}, r_min 2^{(j+1)/J}), node at the log-midpoint
- Node weight = exact shell measure x angular weight (annulus volumes exact at grid-aligned radii)
- Seminorm N_p(u; r), seminorm profiles, X^p / Y^{1,p} norms with tail estimates
- Radial means, gradients of sampled fields, CSV I/O
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from models.run_models import GridConfig
from services.errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class AnnularGrid:
    dim: int = 2
    r_min: float = 2.0 ** -8
    r_max: float = 2.0 ** 8
    radial_per_octave: int = 8
    angular_count: int = 64

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"Grid dimension must be 2 or 3, got {self.dim}")
        if not 0 < self.r_min < self.r_max:
            raise ConfigurationError("Grid requires 0 < r_min < r_max")
        if self.radial_per_octave < 4 or self.angular_count < 8:
            raise ConfigurationError("Grid requires J >= 4 and A >= 8")
        shells = self.radial_per_octave * math.log2(self.r_max / self.r_min)
        if abs(shells - round(shells)) > 1e-6:
            raise ConfigurationError("r_max / r_min must be a power of 2^(1/J)")
        if self.dim == 3 and self.angular_count % 2:
            raise ConfigurationError("N = 3 grids need an even angular count")

    @classmethod
    def from_config(cls, cfg: GridConfig) -> "AnnularGrid":
        return cls(
            dim=cfg.dim, r_min=cfg.r_min, r_max=cfg.r_max,
            radial_per_octave=cfg.radial_per_octave, angular_count=cfg.angular_count,
        )

    # ---------------- radial structure ----------------

    @cached_property
    def n_radial(self) -> int:
        return int(round(self.radial_per_octave * math.log2(self.r_max / self.r_min)))

    @property
    def log_step(self) -> float:
        return math.log(2.0) / self.radial_per_octave

    @cached_property
    def edges(self) -> np.ndarray:
        return self.r_min * 2.0 ** (np.arange(self.n_radial + 1) / self.radial_per_octave)

    @cached_property
    def radii(self) -> np.ndarray:
        """Node radii rho_j (log-midpoints)"""
        return self.r_min * 2.0 ** ((np.arange(self.n_radial) + 0.5) / self.radial_per_octave)

    @cached_property
    def shell_measure(self) -> np.ndarray:
        n = self.dim
        return (self.edges[1:] ** n - self.edges[:-1] ** n) / n

    # ---------------- angular structure ----------------

    @cached_property
    def theta(self) -> np.ndarray:
        """Azimuths 2 pi a / A"""
        return 2.0 * np.pi * np.arange(self.angular_count) / self.angular_count

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit vectors, shape (n_dir, N)"""
        if self.dim == 2:
            return np.stack([np.cos(self.theta), np.sin(self.theta)], axis=-1)
        cos_pol, _ = np.polynomial.legendre.leggauss(self.angular_count // 2)
        sin_pol = np.sqrt(1.0 - cos_pol ** 2)
        d = np.stack([
            np.outer(sin_pol, np.cos(self.theta)),
            np.outer(sin_pol, np.sin(self.theta)),
            np.outer(cos_pol, np.ones_like(self.theta)),
        ], axis=-1)
        return d.reshape(-1, 3)

    @cached_property
    def angular_weights(self) -> np.ndarray:
        if self.dim == 2:
            return np.full(self.angular_count, 2.0 * np.pi / self.angular_count)
        _, w = np.polynomial.legendre.leggauss(self.angular_count // 2)
        return np.outer(w, np.full(self.angular_count, 2.0 * np.pi / self.angular_count)).ravel()

    @property
    def sphere_area(self) -> float:
        return 2.0 * np.pi if self.dim == 2 else 4.0 * np.pi

    @property
    def n_dir(self) -> int:
        return self.directions.shape[0]

    # ---------------- nodes ----------------

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights, shape (n_radial, n_dir)"""
        return np.outer(self.shell_measure, self.angular_weights)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (n_radial, n_dir, N)"""
        return self.radii[:, None, None] * self.directions[None, :, :]

    @property
    def shape(self):
        return (self.n_radial, self.n_dir)

    @cached_property
    def dyadic_radii(self) -> np.ndarray:
        """Grid-aligned radii r with 2r <= r_max"""
        return self.edges[: self.n_radial - self.radial_per_octave + 1]

    def check_annulus(self, r: float):
        if not (self.r_min * (1 - _RTOL) <= r and 2.0 * r <= self.r_max * (1 + _RTOL)):
            raise DomainError(f"radius {r:g} outside grid range [{self.r_min:g}, {self.r_max / 2:g}]")

    def shell_overlap(self, r: float) -> np.ndarray:
        """Fraction of each shell's measure inside r <= |x| < 2r"""
        n = self.dim
        lo = np.maximum(self.edges[:-1], r)
        hi = np.minimum(self.edges[1:], 2.0 * r)
        covered = np.clip(hi ** n - lo ** n, 0.0, None) / n
        frac = covered / self.shell_measure
        frac[frac < 1e-12] = 0.0
        return np.minimum(frac, 1.0)

    def nearest_shell(self, r: float) -> int:
        if not (self.r_min * (1 - _RTOL) <= r <= self.r_max * (1 + _RTOL)):
            raise DomainError(f"radius {r:g} outside grid range [{self.r_min:g}, {self.r_max:g}]")
        return int(np.argmin(np.abs(np.log(self.radii) - math.log(r))))

    def describe(self) -> str:
        return (
            f"N={self.dim} r=[{self.r_min:g}, {self.r_max:g}] J={self.radial_per_octave} "
            f"A={self.angular_count} nodes={self.n_radial * self.n_dir}"
        )


# ============================================================
# FIELDS
# ============================================================

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Sampled function on an AnnularGrid; source/gradient keep the analytic form when known"""
    grid: AnnularGrid
    values: np.ndarray
    source: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise DomainError(f"field '{self.name}' has non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: AnnularGrid, fn, gradient=None, name: str = "") -> "ScalarField":
        return cls(grid=grid, values=fn(grid.points), source=fn, gradient=gradient, name=name)

    @classmethod
    def zeros(cls, grid: AnnularGrid, name: str = "zero") -> "ScalarField":
        return cls(
            grid=grid, values=np.zeros(grid.shape),
            source=lambda x: np.zeros(np.shape(x)[:-1]),
            gradient=lambda x: np.zeros(np.shape(x)), name=name,
        )

    def with_values(self, values: np.ndarray, name: Optional[str] = None) -> "ScalarField":
        return ScalarField(grid=self.grid, values=values, name=name if name is not None else self.name)

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            if other.grid is not self.grid:
                raise DomainError("fields live on different grids")
            values = op(self.values, other.values)
            source = None
            if self.source is not None and other.source is not None:
                a, b = self.source, other.source
                source = lambda x: op(a(x), b(x))
            return ScalarField(grid=self.grid, values=values, source=source)
        return ScalarField(grid=self.grid, values=op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar: float):
        s = float(scalar)
        src = self.source
        grad = self.gradient
        return ScalarField(
            grid=self.grid, values=s * self.values,
            source=(lambda x: s * src(x)) if src is not None else None,
            gradient=(lambda x: s * grad(x)) if grad is not None else None,
            name=self.name,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class SeminormProfile:
    p: float
    radii: np.ndarray
    values: np.ndarray

    def at(self, r: float) -> float:
        i = int(np.argmin(np.abs(np.log(self.radii) - math.log(r))))
        return float(self.values[i])


@dataclass
class NormEstimate:
    """Truncated log-grid integral with tail estimates"""
    value: float
    truncated: float
    tail_low: float
    tail_high: float
    divergent: bool = False

    @property
    def tail(self) -> float:
        return self.tail_low + self.tail_high

    @property
    def finite(self) -> bool:
        return not self.divergent and math.isfinite(self.value)


# ============================================================
# SEMINORMS
# ============================================================

def _check_p(p: float):
    if not (1.0 < p < math.inf):
        raise DomainError(f"p must lie in (1, inf), got {p}")


def annulus_integral(u: ScalarField, r: float, power: Optional[float] = None) -> float:
    """int_{r <= |x| < 2r} u dx, or int |u|^power dx when power is given"""
    grid = u.grid
    grid.check_annulus(r)
    vals = u.values if power is None else np.abs(u.values) ** power
    return float(np.sum(grid.shell_overlap(r) * np.sum(vals * grid.weights, axis=1)))


def seminorm(u: ScalarField, r: float, p: float = 2.0) -> float:
    """N_p(u; r) = (r^{-N} int_{r<=|x|<2r} |u|^p dx)^{1/p}"""
    _check_p(p)
    total = annulus_integral(u, r, power=p)
    return (total / r ** u.grid.dim) ** (1.0 / p)


def seminorm_profile(u: ScalarField, p: float = 2.0) -> SeminormProfile:
    """N_p(u; r_i) at every grid-aligned dyadic radius"""
    _check_p(p)
    grid = u.grid
    J = grid.radial_per_octave
    shell_sums = np.sum(np.abs(u.values) ** p * grid.weights, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(shell_sums)])
    n_annuli = grid.n_radial - J + 1
    sums = np.clip(cum[J: J + n_annuli] - cum[:n_annuli], 0.0, None)
    radii = grid.dyadic_radii
    return SeminormProfile(p=p, radii=radii, values=(sums / radii ** grid.dim) ** (1.0 / p))


def vector_magnitude(components: Sequence[ScalarField]) -> ScalarField:
    grid = components[0].grid
    mag = np.sqrt(sum(c.values ** 2 for c in components))
    return ScalarField(grid=grid, values=mag, name="|grad|")


def q_weight(m: float, n: float, t) -> np.ndarray:
    """Q_{m,n}(t) = t^m for 0 < t <= 1, t^n for t > 1"""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("q_weight requires t > 0")
    return np.where(t <= 1.0, t ** m, t ** n)


def log_integral(radii: np.ndarray, integrand: np.ndarray, per_octave: int, label: str = "") -> NormEstimate:
    """
    int integrand(rho) drho/rho over (0, inf), trapezoid in log rho on the given
    radii plus geometric tails fitted on the end octaves.

    Divergence: the integrand does not decay over the last (or first) octave and
    the end octave adds more than 1% to the partial sum.
    """
    t = np.log(radii)
    h = np.abs(np.asarray(integrand, dtype=float))
    truncated = float(trapezoid(h, t))
    J = per_octave
    if h.size <= J:
        return NormEstimate(value=truncated, truncated=truncated, tail_low=0.0, tail_high=0.0)

    def tail(end: float, inner: float) -> float:
        if end <= 0.0:
            return 0.0
        if inner <= 0.0:
            return math.inf
        rate = math.log(inner / end) / math.log(2.0)
        return end / rate if rate > 0 else math.inf

    tail_high = tail(h[-1], h[-1 - J])
    tail_low = tail(h[0], h[J])

    def end_octave_share(sl) -> float:
        seg = h[sl]
        piece = float(np.sum(seg[1:] + seg[:-1])) * 0.5 * (t[1] - t[0])
        return piece / truncated if truncated > 0 else 0.0

    divergent = (
        (not math.isfinite(tail_high) and end_octave_share(slice(-J - 1, None)) > 0.01)
        or (not math.isfinite(tail_low) and end_octave_share(slice(0, J + 1)) > 0.01)
    )
    if not math.isfinite(tail_high) and not divergent:
        tail_high = 0.0
    if not math.isfinite(tail_low) and not divergent:
        tail_low = 0.0
    value = math.inf if divergent else truncated + tail_low + tail_high
    if divergent:
        logger.warning(f"[Grid] {label} integral diverges (end octave does not level off)")
    elif truncated > 0 and (tail_low + tail_high) / truncated > 0.01:
        logger.warning(f"[Grid] {label} tail estimate {(tail_low + tail_high) / truncated:.2%} of truncated value")
    return NormEstimate(value=value, truncated=truncated, tail_low=tail_low, tail_high=tail_high, divergent=divergent)


def xp_norm(u: ScalarField, p: float = 2.0) -> NormEstimate:
    """int_0^inf Q_{N,1}(rho) N_p(u; rho) drho/rho"""
    prof = seminorm_profile(u, p)
    weight = q_weight(u.grid.dim, 1.0, prof.radii)
    return log_integral(prof.radii, weight * prof.values, u.grid.radial_per_octave, label="X^p")


def y_norm(f_grad: Sequence[ScalarField], M: float, p: float = 2.0) -> NormEstimate:
    """int_0^inf Q_{M,1}(rho) N_p(|grad f|; rho) drho/rho"""
    grid = f_grad[0].grid
    if not 0.0 <= M <= grid.dim:
        raise DomainError(f"M must lie in [0, {grid.dim}], got {M}")
    prof = seminorm_profile(vector_magnitude(f_grad), p)
    weight = q_weight(M, 1.0, prof.radii)
    return log_integral(prof.radii, weight * prof.values, grid.radial_per_octave, label="Y^{1,p}_M")


def y_membership(
    f: ScalarField, f_grad: Sequence[ScalarField], M: float, p: float = 2.0, tol: float = 1e-2
) -> tuple:
    """
    Y^{1,p}_M membership: finite y_norm and vanishing spherical mean at r_max.

    Returns:
        (NormEstimate, mean at r_max, member flag)
    """
    est = y_norm(f_grad, M, p)
    peak = max(f.sup(), 1e-300)
    mean = radial_mean(f, f.grid.r_max)
    member = est.finite and abs(mean) <= tol * peak
    return est, mean, member


def y1p_norm(f: ScalarField, f_grad: Sequence[ScalarField], p: float = 2.0) -> NormEstimate:
    """|int_{1<=|x|<2} f dx| + int_0^inf Q_{N,0}(rho) N_p(|grad f|; rho) drho/rho"""
    grid = f.grid
    prof = seminorm_profile(vector_magnitude(f_grad), p)
    weight = q_weight(grid.dim, 0.0, prof.radii)
    est = log_integral(prof.radii, weight * prof.values, grid.radial_per_octave, label="Y^{1,p}")
    mass = abs(annulus_integral(f, 1.0))
    return NormEstimate(
        value=est.value + mass, truncated=est.truncated + mass,
        tail_low=est.tail_low, tail_high=est.tail_high, divergent=est.divergent,
    )


def y1p0_norm(f_grad: Sequence[ScalarField], p: float = 2.0) -> NormEstimate:
    """int_0^1 rho^N (1 - log rho) N_p drho/rho + int_1^inf N_p drho"""
    grid = f_grad[0].grid
    prof = seminorm_profile(vector_magnitude(f_grad), p)
    r = prof.radii
    weight = np.where(r <= 1.0, r ** grid.dim * (1.0 - np.log(r)), r)
    return log_integral(r, weight * prof.values, grid.radial_per_octave, label="Y^{1,p}_0")


def radial_mean(f: ScalarField, r: float) -> float:
    """Spherical mean of f on the shell nearest to r"""
    grid = f.grid
    j = grid.nearest_shell(r)
    return float(np.dot(f.values[j], grid.angular_weights) / grid.sphere_area)


def radial_means(f: ScalarField) -> np.ndarray:
    """Spherical mean per shell"""
    grid = f.grid
    return f.values @ grid.angular_weights / grid.sphere_area


def acceptance_radii(grid: AnnularGrid) -> np.ndarray:
    """Octave midpoints 4 r_min 2^{k + 1/2} up to r_max / 4, snapped to grid edges"""
    J = grid.radial_per_octave
    start = 2 * J + J // 2
    idx = np.arange(start, grid.n_radial + 1, J)
    radii = grid.edges[idx]
    return radii[radii <= grid.r_max / 4.0 * (1 + _RTOL)]


# ============================================================
# GRADIENTS
# ============================================================

def _radial_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order d/dt along axis 0, one-sided at the ends"""
    u = values
    n = u.shape[0]
    if n < 5:
        raise DomainError("need at least five shells for fourth-order differences")
    d = np.empty_like(u)
    d[2:-2] = (-u[4:] + 8.0 * u[3:-1] - 8.0 * u[1:-3] + u[:-4]) / (12.0 * h)
    d[0] = (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4]) / (12.0 * h)
    d[1] = (-3.0 * u[0] - 10.0 * u[1] + 18.0 * u[2] - 6.0 * u[3] + u[4]) / (12.0 * h)
    d[-1] = -(-25.0 * u[-1] + 48.0 * u[-2] - 36.0 * u[-3] + 16.0 * u[-4] - 3.0 * u[-5]) / (12.0 * h)
    d[-2] = -(-3.0 * u[-1] - 10.0 * u[-2] + 18.0 * u[-3] - 6.0 * u[-4] + u[-5]) / (12.0 * h)
    return d


def _angular_derivative(values: np.ndarray, h: float) -> np.ndarray:
    u = values
    return (
        -np.roll(u, -2, axis=1) + 8.0 * np.roll(u, -1, axis=1)
        - 8.0 * np.roll(u, 1, axis=1) + np.roll(u, 2, axis=1)
    ) / (12.0 * h)


def polar_derivatives(values: np.ndarray, grid: AnnularGrid):
    """(d/dt, d/dtheta) of nodal values, t = log rho (N = 2)"""
    if grid.dim != 2:
        raise ConfigurationError("polar differences are implemented for N = 2")
    du_dt = _radial_derivative(values, grid.log_step)
    du_dth = _angular_derivative(values, 2.0 * np.pi / grid.angular_count)
    return du_dt, du_dth


def gradient_field(u: ScalarField) -> List[ScalarField]:
    """Cartesian gradient components of u: analytic when available, else finite differences"""
    grid = u.grid
    if u.gradient is not None:
        g = u.gradient(grid.points)
        return [ScalarField(grid=grid, values=g[..., k], name=f"d{k + 1} {u.name}") for k in range(grid.dim)]
    du_dt, du_dth = polar_derivatives(u.values, grid)
    rho = grid.radii[:, None]
    c, s = np.cos(grid.theta)[None, :], np.sin(grid.theta)[None, :]
    gx = (c * du_dt - s * du_dth) / rho
    gy = (s * du_dt + c * du_dth) / rho
    return [
        ScalarField(grid=grid, values=gx, name=f"d1 {u.name}"),
        ScalarField(grid=grid, values=gy, name=f"d2 {u.name}"),
    ]


# ============================================================
# CSV I/O
# ============================================================

def field_to_csv(u: ScalarField, path: Path):
    """Columns (j, a, rho, theta, value); theta is the azimuth"""
    grid = u.grid
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    azimuth = np.arctan2(grid.directions[:, 1], grid.directions[:, 0]) % (2.0 * np.pi)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["j", "a", "rho", "theta", "value"])
        writer.writeheader()
        for j in range(grid.n_radial):
            for a in range(grid.n_dir):
                writer.writerow({
                    "j": j, "a": a, "rho": repr(float(grid.radii[j])),
                    "theta": repr(float(azimuth[a])), "value": repr(float(u.values[j, a])),
                })


def field_from_csv(grid: AnnularGrid, path: Path, name: str = "") -> ScalarField:
    values = np.full(grid.shape, np.nan)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            values[int(row["j"]), int(row["a"])] = float(row["value"])
    if np.isnan(values).any():
        raise DomainError(f"{path} does not cover every node of the grid")
    return ScalarField(grid=grid, values=values, name=name or Path(path).stem)


def profile_to_csv(profile: SeminormProfile, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["r", "value"])
        writer.writeheader()
        for r, v in zip(profile.radii, profile.values):
            writer.writerow({"r": repr(float(r)), "value": repr(float(v))})
