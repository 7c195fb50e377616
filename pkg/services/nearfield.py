# services/nearfield.py
"""
Near-field quadrature on the log-polar grid (N = 2)

Every target node owns a patch of (2s+1) x (2s_theta+1) cells in (t = log rho, theta).
Cells in the patch are integrated with tensor Gauss-Legendre rules against a
piecewise-linear reconstruction of the density

    u(t, theta) ~ u_c + (t - t_c) D_t u_c + (theta - theta_c) D_theta u_c

The self cell uses a polar rule around the target over its four triangles. For
principal-value kernels the polar radius runs on a log scale from eps 2^-l, one rule
per exclusion level l, and opposite triangles share their angular nodes so the odd
part of the kernel cancels node by node.

The result is a sparse correction C0 + Ct Dt + Ctheta Dtheta that replaces the
midpoint contribution of the patch cells.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy import sparse

from models.run_models import OperatorConfig
from services.errors import ConfigurationError
from services.grid import AnnularGrid

logger = logging.getLogger(__name__)

# kernel(x, y) -> values, broadcasting x (c, 1, 2) against y (c, q, 2)
PointKernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def gauss_legendre(a, b, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """GL nodes/weights on [a, b]; a and b may be arrays (nodes along a new last axis)"""
    xi, wi = np.polynomial.legendre.leggauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (xi + 1.0), half * wi


@dataclass(frozen=True, eq=False)
class PatchRule:
    """Parameter-space quadrature shared by every target of a grid"""
    s: int
    s_theta: int
    h_t: float
    h_theta: float
    # patch cells other than the self cell
    cell_dj: np.ndarray
    cell_da: np.ndarray
    cell_start: np.ndarray  # first quadrature point of each cell (points sorted by cell)
    q_dt: np.ndarray  # offsets from the target
    q_dtheta: np.ndarray
    q_w: np.ndarray  # parameter-space weights
    q_xi_t: np.ndarray  # offsets from the owning cell centre
    q_xi_theta: np.ndarray
    # self cell, one rule per exclusion level: shape (levels, n_self)
    self_dt: np.ndarray
    self_dtheta: np.ndarray
    self_w: np.ndarray
    principal_value: bool

    @property
    def levels(self) -> int:
        return self.self_w.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cell_dj.size


def pv_epsilon(grid: AnnularGrid, cfg: OperatorConfig) -> float:
    return cfg.pv_epsilon_factor * min(grid.log_step, 2.0 * np.pi / grid.angular_count)


def richardson_weights(levels: int) -> np.ndarray:
    """Weights c with sum c_l I(eps 2^-l) = I(0) for I(eps) = I0 + a1 eps + ... + a_{L-1} eps^{L-1}"""
    ratios = 2.0 ** -np.arange(levels)
    vander = np.vander(ratios, levels, increasing=True)  # rows: levels, cols: powers
    rhs = np.zeros(levels)
    rhs[0] = 1.0
    return np.linalg.solve(vander.T, rhs)


def _triangle_rule(h_t: float, h_theta: float, n: int, lower: float, log_scale: bool):
    """Polar rule on the self cell centred at the origin of parameter space"""
    half_t, half_th = 0.5 * h_t, 0.5 * h_theta
    phi_c = math.atan2(half_th, half_t)
    # right, top, left, bottom; left/bottom are right/top rotated by pi
    spans = [(-phi_c, phi_c), (phi_c, np.pi - phi_c), (np.pi - phi_c, np.pi + phi_c), (np.pi + phi_c, 2 * np.pi - phi_c)]
    dt, dth, w = [], [], []
    for lo, hi in spans:
        phi, w_phi = gauss_legendre(lo, hi, n)
        c, s = np.cos(phi), np.sin(phi)
        with np.errstate(divide="ignore"):
            reach = np.where(np.abs(c) * half_th >= np.abs(s) * half_t, half_t / np.abs(c), half_th / np.abs(s))
        if log_scale:
            lo_w = np.full_like(reach, math.log(lower))
            hi_w = np.log(np.maximum(reach, lower))
            wv, w_w = gauss_legendre(lo_w, hi_w, n)
            sigma = np.exp(wv)
            weight = w_phi[:, None] * w_w * sigma * sigma
        else:
            sigma, w_sigma = gauss_legendre(np.zeros_like(reach), reach, n)
            weight = w_phi[:, None] * w_sigma * sigma
        dt.append((sigma * c[:, None]).ravel())
        dth.append((sigma * s[:, None]).ravel())
        w.append(weight.ravel())
    return np.concatenate(dt), np.concatenate(dth), np.concatenate(w)


def build_patch_rule(grid: AnnularGrid, cfg: OperatorConfig, principal_value: bool) -> PatchRule:
    if grid.dim != 2:
        raise ConfigurationError("near-field quadrature is implemented for N = 2")
    s = cfg.near_singular_refinement
    s_theta = min(s, (grid.angular_count - 1) // 2)
    h_t = grid.log_step
    h_th = 2.0 * np.pi / grid.angular_count
    q = 2 * s
    xi, wi = np.polynomial.legendre.leggauss(q)

    cell_dj, cell_da, starts = [], [], []
    q_dt, q_dth, q_w, q_xt, q_xth = [], [], [], [], []
    count = 0
    for dj in range(-s, s + 1):
        for da in range(-s_theta, s_theta + 1):
            if dj == 0 and da == 0:
                continue
            # neighbours of the target get a 2 x 2 subdivision
            sub = 2 if max(abs(dj), abs(da)) == 1 else 1
            local = []
            for it in range(sub):
                for ith in range(sub):
                    lo_t = -0.5 + it / sub
                    lo_th = -0.5 + ith / sub
                    xt = lo_t + (xi + 1.0) / (2 * sub)
                    xth = lo_th + (xi + 1.0) / (2 * sub)
                    wt = wi / (2 * sub)
                    XT, XTH = np.meshgrid(xt, xth, indexing="ij")
                    W = np.outer(wt, wt)
                    local.append((XT.ravel(), XTH.ravel(), W.ravel()))
            xt_all = np.concatenate([p[0] for p in local]) * h_t
            xth_all = np.concatenate([p[1] for p in local]) * h_th
            w_all = np.concatenate([p[2] for p in local]) * h_t * h_th
            cell_dj.append(dj)
            cell_da.append(da)
            starts.append(count)
            q_dt.append(dj * h_t + xt_all)
            q_dth.append(da * h_th + xth_all)
            q_w.append(w_all)
            q_xt.append(xt_all)
            q_xth.append(xth_all)
            count += w_all.size

    if principal_value:
        eps = pv_epsilon(grid, cfg)
        rules = [_triangle_rule(h_t, h_th, q, eps * 2.0 ** -level, log_scale=True)
                 for level in range(cfg.pv_extrapolation_levels)]
    else:
        rules = [_triangle_rule(h_t, h_th, q, 0.0, log_scale=False)]

    rule = PatchRule(
        s=s, s_theta=s_theta, h_t=h_t, h_theta=h_th,
        cell_dj=np.array(cell_dj), cell_da=np.array(cell_da), cell_start=np.array(starts),
        q_dt=np.concatenate(q_dt), q_dtheta=np.concatenate(q_dth), q_w=np.concatenate(q_w),
        q_xi_t=np.concatenate(q_xt), q_xi_theta=np.concatenate(q_xth),
        self_dt=np.stack([r[0] for r in rules]), self_dtheta=np.stack([r[1] for r in rules]),
        self_w=np.stack([r[2] for r in rules]), principal_value=principal_value,
    )
    logger.debug(
        f"[NearField] patch {2 * s + 1}x{2 * s_theta + 1}, {rule.q_w.size} patch points, "
        f"{rule.self_w.shape[1]} self points x {rule.levels} level(s)"
    )
    return rule


def _to_points(t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    rho = np.exp(t)
    return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=-1)


@dataclass
class PatchCoefficients:
    """Per-target coefficients for one chunk of targets"""
    c0: np.ndarray  # (c, n_cells) accurate minus midpoint
    ct: np.ndarray
    ctheta: np.ndarray
    self_levels: np.ndarray  # (c, levels, 3): (C0, Ct, Ctheta) on the self cell


def patch_coefficients(
    rule: PatchRule, grid: AnnularGrid, rows: np.ndarray, kernel: PointKernel
) -> PatchCoefficients:
    """Quadrature coefficients for target nodes `rows` (flat indices)"""
    A = grid.n_dir
    j = rows // A
    a = rows % A
    t_x = np.log(grid.radii[j])
    th_x = grid.theta[a]
    x = grid.points.reshape(-1, 2)[rows]

    # patch cells
    t_q = t_x[:, None] + rule.q_dt[None, :]
    th_q = th_x[:, None] + rule.q_dtheta[None, :]
    y = _to_points(t_q, th_q)
    jac = np.exp(2.0 * t_q)
    kw = kernel(x[:, None, :], y) * rule.q_w[None, :] * jac
    c0 = np.add.reduceat(kw, rule.cell_start, axis=1)
    ct = np.add.reduceat(kw * rule.q_xi_t[None, :], rule.cell_start, axis=1)
    cth = np.add.reduceat(kw * rule.q_xi_theta[None, :], rule.cell_start, axis=1)

    # midpoint contribution the patch replaces
    jj = j[:, None] + rule.cell_dj[None, :]
    aa = (a[:, None] + rule.cell_da[None, :]) % A
    inside = (jj >= 0) & (jj < grid.n_radial)
    jj_c = np.clip(jj, 0, grid.n_radial - 1)
    nodes = grid.points[jj_c, aa]
    mid = kernel(x[:, None, :], nodes) * grid.weights[jj_c, aa]
    c0 = np.where(inside, c0 - mid, 0.0)
    ct = np.where(inside, ct, 0.0)
    cth = np.where(inside, cth, 0.0)

    # self cell, one rule per level
    levels = []
    for lvl in range(rule.levels):
        t_s = t_x[:, None] + rule.self_dt[lvl][None, :]
        th_s = th_x[:, None] + rule.self_dtheta[lvl][None, :]
        ys = _to_points(t_s, th_s)
        ks = kernel(x[:, None, :], ys) * rule.self_w[lvl][None, :] * np.exp(2.0 * t_s)
        levels.append(np.stack([
            ks.sum(axis=1),
            (ks * rule.self_dt[lvl][None, :]).sum(axis=1),
            (ks * rule.self_dtheta[lvl][None, :]).sum(axis=1),
        ], axis=-1))
    return PatchCoefficients(c0=c0, ct=ct, ctheta=cth, self_levels=np.stack(levels, axis=1))


def difference_matrices(grid: AnnularGrid) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse D_t (central, one-sided at the radial ends) and periodic D_theta"""
    n_r, A = grid.shape
    n = n_r * A
    idx = np.arange(n).reshape(n_r, A)
    h_t = grid.log_step
    h_th = 2.0 * np.pi / grid.angular_count

    rows, cols, vals = [], [], []
    # interior radial rows
    inner = idx[1:-1].ravel()
    rows += [inner, inner]
    cols += [idx[2:].ravel(), idx[:-2].ravel()]
    vals += [np.full(inner.size, 0.5 / h_t), np.full(inner.size, -0.5 / h_t)]
    for edge, nxt, sign in ((idx[0], idx[1], 1.0), (idx[-1], idx[-2], -1.0)):
        rows += [edge, edge]
        cols += [nxt, edge]
        vals += [np.full(A, sign / h_t), np.full(A, -sign / h_t)]
    d_t = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )

    flat = idx.ravel()
    plus = np.roll(idx, -1, axis=1).ravel()
    minus = np.roll(idx, 1, axis=1).ravel()
    d_th = sparse.csr_matrix(
        (
            np.concatenate([np.full(n, 0.5 / h_th), np.full(n, -0.5 / h_th)]),
            (np.concatenate([flat, flat]), np.concatenate([plus, minus])),
        ),
        shape=(n, n),
    )
    return d_t, d_th


@dataclass(eq=False)
class NearField:
    """Assembled sparse correction plus per-level self-cell data for p.v. flags"""
    matrix: sparse.csr_matrix
    self_levels: np.ndarray  # (n, levels, 3)
    weights: np.ndarray  # Richardson weights (levels,)
    d_t: sparse.csr_matrix
    d_theta: sparse.csr_matrix

    def level_values(self, u_flat: np.ndarray) -> np.ndarray:
        """Self-cell contribution of every level at every target, shape (n, levels)"""
        basis = np.stack([u_flat, self.d_t @ u_flat, self.d_theta @ u_flat], axis=-1)
        return np.einsum("nlk,nk->nl", self.self_levels, basis)


def assemble_near_field(
    rule: PatchRule, grid: AnnularGrid, blocks: List[Tuple[np.ndarray, PatchCoefficients]]
) -> NearField:
    """Build C0 + Ct Dt + Ctheta Dtheta from per-chunk coefficients"""
    n = grid.n_radial * grid.n_dir
    A = grid.n_dir
    weights = richardson_weights(rule.levels) if rule.principal_value else np.ones(1)

    r_idx, c_idx, v0, vt, vth = [], [], [], [], []
    self_levels = np.zeros((n, rule.levels, 3))
    for rows, coef in blocks:
        j = rows // A
        a = rows % A
        jj = j[:, None] + rule.cell_dj[None, :]
        aa = (a[:, None] + rule.cell_da[None, :]) % A
        inside = (jj >= 0) & (jj < grid.n_radial)
        r_idx.append(np.broadcast_to(rows[:, None], jj.shape)[inside])
        c_idx.append((jj * A + aa)[inside])
        v0.append(coef.c0[inside])
        vt.append(coef.ct[inside])
        vth.append(coef.ctheta[inside])
        # self cell: Richardson combination of the levels
        combined = np.einsum("l,clk->ck", weights, coef.self_levels)
        r_idx.append(rows)
        c_idx.append(rows)
        v0.append(combined[:, 0])
        vt.append(combined[:, 1])
        vth.append(combined[:, 2])
        self_levels[rows] = coef.self_levels

    rows_all = np.concatenate(r_idx)
    cols_all = np.concatenate(c_idx)

    def mat(vals):
        return sparse.csr_matrix((np.concatenate(vals), (rows_all, cols_all)), shape=(n, n))

    d_t, d_th = difference_matrices(grid)
    matrix = (mat(v0) + mat(vt) @ d_t + mat(vth) @ d_th).tocsr()
    return NearField(matrix=matrix, self_levels=self_levels, weights=weights, d_t=d_t, d_theta=d_th)


def flag_disagreement(level_values: np.ndarray, scale: float) -> np.ndarray:
    """Targets whose first level difference exceeds five times the last one"""
    if level_values.shape[1] < 3:
        return np.zeros(level_values.shape[0], dtype=bool)
    d_first = np.abs(level_values[:, 1] - level_values[:, 0])
    d_last = np.abs(level_values[:, -1] - level_values[:, -2])
    return (d_first > 5.0 * d_last) & (d_first > 1e-10 * max(scale, 1e-300))
