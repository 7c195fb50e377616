# services/solver.py
"""
Fixed-point solver for S u = f
- K(u) = psi^-1 R((I^psi - S)u + f), with the gradient of (I^psi - S)u taken from the
  principal-value kernels: d_k (I^psi - S)u = (N-1)((T_k - c_N^-1 R_k^psi)u + d_k phi T_{N+1} u)
- Picard iteration from u_0 = 0, stopped in the B-norm
- Post-hoc residual, existence-bound and decay diagnostics; localization and decay experiments
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from config import settings
from models.report_models import InequalityLine, IterationRecord, SuiteReport
from models.run_models import OperatorConfig
from services.catalog import make_field, power_field
from services.errors import AdmissibilityError, DomainError, MembershipError
from services.geometry import LipschitzSurface, lip_modulus, psi_weight
from services.grid import (
    AnnularGrid,
    ScalarField,
    SeminormProfile,
    acceptance_radii,
    gradient_field,
    seminorm_profile,
    vector_magnitude,
    xp_norm,
    y1p0_norm,
    y1p_norm,
    y_membership,
)
from services.localization import commutator_correction, commutator_field, cutoff, cutoff_slope
from services.majorant import (
    MajorantSpec,
    b_norm,
    bound_thm1_profile,
    bound_thm3,
    dini_bound,
    make_spec,
    profile_from_seminorms,
    sigma_minus,
    surface_modulus,
)
from services.operators import (
    OperatorDiagnostics,
    c_n,
    fit_constant,
    gradient_bound_rhs,
    gradient_mismatch,
    interior_radii,
    potential_bound_rhs,
    pv_transform,
    r_solve,
    random_local_field,
    riesz_potential,
    single_layer,
    single_layer_grad,
)

logger = logging.getLogger(__name__)

DIVERGENCE_STREAK = 3


# ============================================================
# FIXED-POINT MAP
# ============================================================

def difference_gradient(
    u: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    diagnostics: Optional[list] = None,
) -> List[ScalarField]:
    """d_k (I^psi - S)u = (N-1)((T_k - c_N^-1 R_k^psi)u + d_k phi T_{N+1} u); zero on the flat surface"""
    grid = u.grid
    n = grid.dim
    if surface.flat or not np.any(u.values):
        return [ScalarField.zeros(grid, name=f"d{k} (Ipsi - S) {u.name}") for k in range(1, n + 1)]
    cn = c_n(n)
    t_top = pv_transform(u, f"T{n + 1}", surface, cfg, diagnostics)
    grad_phi = surface.grad_phi(grid.points)
    out = []
    for k in range(1, n + 1):
        t_k = pv_transform(u, f"T{k}", surface, cfg, diagnostics)
        r_k = pv_transform(u, f"Rpsi{k}", surface, cfg, diagnostics)
        values = (n - 1) * ((t_k.values - r_k.values / cn) + grad_phi[..., k - 1] * t_top.values)
        out.append(ScalarField(grid=grid, values=values, name=f"d{k} (Ipsi - S) {u.name}"))
    return out


def apply_K(
    u: ScalarField,
    f: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    f_grad: Optional[Sequence[ScalarField]] = None,
    diagnostics: Optional[list] = None,
) -> ScalarField:
    """K(u) = psi^-1 c_N/(N-1) sum_k R_k (d_k (I^psi - S)u + d_k f)"""
    grid = u.grid
    n = grid.dim
    f_grad = list(f_grad) if f_grad is not None else gradient_field(f)
    coupling = difference_gradient(u, surface, cfg, diagnostics)
    total = np.zeros(grid.shape)
    for k in range(1, n + 1):
        component = ScalarField(grid=grid, values=f_grad[k - 1].values + coupling[k - 1].values, name=f"d{k} rhs")
        total += pv_transform(component, f"R{k}", None, cfg, diagnostics).values
    psi = psi_weight(surface, grid.points)
    return ScalarField(grid=grid, values=c_n(n) / (n - 1) * total / psi, name=f"K({u.name})")


def k0_profile(
    f: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    p: float = 2.0,
):
    """N_p(K(0); e^{-t}) with K(0) = psi^-1 R f, as a LogProfile"""
    k0 = apply_K(ScalarField.zeros(f.grid), f, surface, cfg)
    return profile_from_seminorms(seminorm_profile(k0, p), name=f"K(0) {f.name}")


def b_norm_field(u: ScalarField, spec: MajorantSpec, p: float = 2.0) -> float:
    return b_norm(spec, profile_from_seminorms(seminorm_profile(u, p)))


def residual_profile(
    u: ScalarField,
    f: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    p: float = 2.0,
    diagnostics: Optional[list] = None,
) -> SeminormProfile:
    """Seminorm profile of S u - f"""
    return seminorm_profile(single_layer(u, surface, cfg, diagnostics) - f, p)


def relative_residual(residual: SeminormProfile, f_profile: SeminormProfile, radii: Sequence[float]) -> np.ndarray:
    """N_p(S u - f; r) / max_r N_p(f; r) at the given radii"""
    scale = max(max((f_profile.at(r) for r in radii), default=0.0), 1e-300)
    return np.array([residual.at(r) / scale for r in radii])


def default_spec(surface: LipschitzSurface) -> MajorantSpec:
    """Spec with the default constants; used for the B-norm and bound shapes when none is given"""
    lambda0 = 0.0 if surface.flat else surface.lambda0
    return make_spec(surface.dim, min(lambda0, settings.LAMBDA_STAR), surface_modulus(surface), label=surface.name)


# ============================================================
# PICARD ITERATION
# ============================================================

@dataclass
class SolveReport:
    iterations: int
    verdict: str  # converged | stalled | diverged
    records: List[IterationRecord] = field(default_factory=list)
    residual_profiles: List[SeminormProfile] = field(default_factory=list)
    solution_seminorms: Optional[SeminormProfile] = None
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    relative_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bounds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound_margins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fitted_constant: float = 0.0
    monotone_residual: bool = True
    decay: Optional[SuiteReport] = None
    diagnostics: List[OperatorDiagnostics] = field(default_factory=list)

    @property
    def contraction_estimates(self) -> List[float]:
        return [r.contraction for r in self.records if r.contraction is not None]

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    def per_radius(self) -> List[Dict[str, float]]:
        """Rows (r, N_p(u;r), bound, ratio, relative residual) at the acceptance radii"""
        rows = []
        for i, r in enumerate(self.radii):
            rows.append({
                "r": float(r),
                "seminorm": float(self.solution_seminorms.at(r)) if self.solution_seminorms is not None else 0.0,
                "bound": float(self.bounds[i]),
                "ratio": float(self.bound_margins[i]),
                "relative_residual": float(self.relative_residual[i]),
            })
        return rows


def _check_admissible(surface: LipschitzSurface, spec: MajorantSpec):
    if not surface.flat and surface.lambda0 > spec.lambda_star + 1e-12:
        raise AdmissibilityError(
            f"lambda0 exceeds admissible threshold: {surface.lambda0:g} > {spec.lambda_star:g}"
        )


def picard_solve(
    f: ScalarField,
    surface: LipschitzSurface,
    cfg: Optional[OperatorConfig] = None,
    tol: float = 1e-8,
    max_iter: int = 30,
    spec: Optional[MajorantSpec] = None,
    p: float = 2.0,
    membership_tol: float = 1e-2,
    f_grad: Optional[Sequence[ScalarField]] = None,
    check_membership: bool = True,
) -> Tuple[ScalarField, SolveReport]:
    """
    u_0 = 0, u_{n+1} = K(u_n), stopped when ||u_{n+1} - u_n||_B <= tol (1 + ||u_n||_B).

    Returns:
        (u, SolveReport)

    Raises:
        AdmissibilityError: lambda0 above Lambda*
        MembershipError: f fails the Y^{1,p}_M check
    """
    grid = f.grid
    spec = spec or default_spec(surface)
    _check_admissible(surface, spec)
    f_grad = list(f_grad) if f_grad is not None else gradient_field(f)
    if check_membership:
        est, mean, member = y_membership(f, f_grad, spec.M, p, membership_tol)
        if not member:
            raise MembershipError(
                f"'{f.name}' fails the Y^(1,p)_M check (M={spec.M:.3f}): norm={est.value:.4g}, mean at r_max={mean:.4g}"
            )

    diagnostics: List[OperatorDiagnostics] = []
    report = SolveReport(iterations=0, verdict="stalled", diagnostics=diagnostics)
    f_prof = seminorm_profile(f, p)
    radii = acceptance_radii(grid)
    f_scale = max(max((f_prof.at(r) for r in radii), default=0.0), 1e-300)

    u = ScalarField.zeros(grid, name="u0")
    prev_step: Optional[float] = None
    streak = 0
    for n in range(1, max_iter + 1):
        new = apply_K(u, f, surface, cfg, f_grad, diagnostics)
        new = new.with_values(new.values, name=f"u{n}")
        b_step = b_norm_field(new - u, spec, p)
        b_u = b_norm_field(u, spec, p)
        residual = residual_profile(new, f, surface, cfg, p, diagnostics)
        residual_sup = max((residual.at(r) for r in radii), default=0.0)
        contraction = b_step / prev_step if prev_step else None
        report.records.append(IterationRecord(n=n, b_step=b_step, residual_sup=residual_sup, contraction=contraction))
        report.residual_profiles.append(residual)
        logger.info(
            f"[Picard {n}] B-step={b_step:.3e} residual={residual_sup / f_scale:.3e} "
            f"contraction={'-' if contraction is None else f'{contraction:.3f}'}"
        )
        u = new
        if b_step <= tol * (1.0 + b_u):
            report.verdict = "converged"
            report.iterations = max(n - 1, 1)
            break
        streak = streak + 1 if prev_step is not None and b_step > prev_step else 0
        prev_step = b_step
        if streak >= DIVERGENCE_STREAK:
            report.verdict = "diverged"
            report.iterations = n
            logger.warning(f"[Picard {n}] step grew {DIVERGENCE_STREAK} times in a row, stopping")
            break
    else:
        report.iterations = max_iter
        logger.warning(f"[Picard] no convergence after {max_iter} iterations")

    # post hoc
    report.solution_seminorms = seminorm_profile(u, p)
    report.radii = radii
    last = report.residual_profiles[-1]
    report.relative_residual = relative_residual(last, f_prof, radii)
    zeta = profile_from_seminorms(seminorm_profile(vector_magnitude(f_grad), p), name="grad f")
    report.bounds = bound_thm1_profile(spec, zeta, radii)
    report.bound_margins = np.array([
        report.solution_seminorms.at(r) / b if b > 0 else (0.0 if report.solution_seminorms.at(r) == 0 else math.inf)
        for r, b in zip(radii, report.bounds)
    ])
    report.fitted_constant = float(np.max(report.bound_margins, initial=0.0))
    sups = [rec.residual_sup for rec in report.records[1:]]
    report.monotone_residual = all(b <= a * (1 + 1e-6) + 1e-14 for a, b in zip(sups, sups[1:]))
    report.decay = decay_check(report.solution_seminorms, spec)
    logger.info(
        f"[Picard] {report.verdict} after {report.iterations} iterations, "
        f"max relative residual {float(np.max(report.relative_residual, initial=0.0)):.3e}, "
        f"fitted bound constant {report.fitted_constant:.3g}"
    )
    return u, report


# ============================================================
# DECAY AND UNIQUENESS
# ============================================================

def decay_check(u_seminorms: SeminormProfile, spec: MajorantSpec, tolerance: float = 0.05) -> SuiteReport:
    """
    N_p(u; e^{-t}) against Sigma^-(t, 0) (exp(-c1 int_1^r Lambda dnu/nu) as r -> inf, r^-M as r -> 0):
    the log-ratio must not grow over the two end octaves at either side.
    """
    report = SuiteReport(suite=f"decay {spec.label}")
    prof = profile_from_seminorms(u_seminorms)
    scale = prof.sup
    if scale == 0.0:
        report.check("decay as r -> 0", True, "u vanishes")
        report.check("decay as r -> inf", True, "u vanishes")
        return report
    ceiling = sigma_minus(spec, prof.t, 0.0)
    J = prof.per_octave
    for label, sl in (("decay as r -> 0", slice(-2 * J - 1, None)), ("decay as r -> inf", slice(0, 2 * J + 1))):
        vals = prof.values[sl]
        t = prof.t[sl]
        keep = vals > 1e-12 * scale
        if keep.sum() < 2:
            report.check(label, True, "u vanishes on the end octaves")
            continue
        log_ratio = np.log(vals[keep] / ceiling[sl][keep])
        slope = float(np.polyfit(np.abs(t[keep]), log_ratio, 1)[0])
        report.check(label, slope <= tolerance, f"log-ratio slope {slope:.4f} per unit t")
        report.values[f"{label} slope"] = slope
        report.add(_trend_line(f"{label}: o(Sigma-) trend", slope))
    return report


def _trend_line(name: str, slope: float) -> InequalityLine:
    return InequalityLine(name=name, points=1, max_ratio=slope, margin=-slope, passed=slope < 0, asserted=False,
                          note="strictly decreasing ratio")


def uniqueness_check(
    surface: LipschitzSurface,
    grid: AnnularGrid,
    cfg: Optional[OperatorConfig] = None,
    spec: Optional[MajorantSpec] = None,
    p: float = 2.0,
) -> SuiteReport:
    """picard_solve with f = 0 must return u = 0"""
    report = SuiteReport(suite=f"uniqueness {surface.name}")
    zero = ScalarField.zeros(grid, name="zero")
    u, solve = picard_solve(zero, surface, cfg, spec=spec, p=p, check_membership=False)
    sup = float(np.max(seminorm_profile(u, p).values, initial=0.0))
    report.check("f = 0 gives u = 0", sup <= 1e-8, f"max seminorm {sup:.3e}")
    report.values["iterations"] = solve.iterations
    return report


# ============================================================
# CONSTANT ESTIMATE
# ============================================================

def difference_weight_integral(surface: LipschitzSurface, profile: SeminormProfile, r: float) -> float:
    """int E_r(rho) N_p(u; rho) drho/rho"""
    rho = profile.radii
    lam = lambda x: np.asarray(lip_modulus(surface, x), dtype=float)
    lam_r = float(lam(r))
    n = surface.dim
    weight = np.where(rho <= r, (rho / r) ** n * lam_r ** 2, lam_r * (lam_r * r / rho + lam(rho)))
    return float(trapezoid(weight * profile.values, np.log(rho)))


def estimate_ck(
    surface: LipschitzSurface,
    grid: AnnularGrid,
    cfg: Optional[OperatorConfig] = None,
    n_fields: int = 4,
    seed: int = 0,
    p: float = 2.0,
) -> Tuple[float, Dict[str, float]]:
    """
    C_K = 2 * C_R * max(C_diff, 1) * max psi^-1, where C_diff is the fitted constant of
    N_p(grad (I^psi - S)u; r) <= C int E_r(rho) N_p(u; rho) drho/rho over random local
    fields and C_R the fitted constant of N_p(R f; r) <= C int Q_{N,0}(rho/r) N_p(grad f; rho) drho/rho.
    """
    radii = interior_radii(grid)
    rng = np.random.default_rng(seed)

    c_r = 0.0
    for fid in ("gaussian", "bump"):
        f = make_field(fid, grid)
        rf = r_solve(f, cfg, p=p, membership_tol=1.0)
        lhs = np.array([seminorm_profile(rf, p).at(r) for r in radii])
        rhs = gradient_bound_rhs(seminorm_profile(vector_magnitude(gradient_field(f)), p), radii, grid.dim)
        c_r = max(c_r, fit_constant(lhs, rhs))

    c_diff = 0.0
    if not surface.flat:
        for i in range(n_fields):
            scale = float(radii[len(radii) // 2]) * 2.0 ** rng.integers(-2, 3)
            u = random_local_field(grid, scale, rng, name=f"ck trial {i}")
            prof_u = seminorm_profile(u, p)
            grad = vector_magnitude(difference_gradient(u, surface, cfg))
            prof_g = seminorm_profile(grad, p)
            lhs = np.array([prof_g.at(r) for r in radii])
            rhs = np.array([difference_weight_integral(surface, prof_u, r) for r in radii])
            c_diff = max(c_diff, fit_constant(lhs, rhs))

    psi_inv = float(np.max(1.0 / psi_weight(surface, grid.points)))
    c_k = 2.0 * c_r * max(c_diff, 1.0) * psi_inv
    details = {"C_R": c_r, "C_diff": c_diff, "max_psi_inv": psi_inv, "C_K": c_k}
    logger.info(f"[Solver] C_K estimate for {surface.name}: " + ", ".join(f"{k}={v:.4g}" for k, v in details.items()))
    return c_k, details


# ============================================================
# OPERATOR IDENTITIES
# ============================================================

def potential_bounds_check(
    grid: AnnularGrid,
    cfg: Optional[OperatorConfig] = None,
    p: float = 2.0,
    field_ids: Sequence[str] = ("gaussian", "bump"),
    identity_tol: float = 2e-2,
) -> SuiteReport:
    """
    Flat-plane potential estimates with one fitted constant each:
    N_p(I u; r) <= C r int Q_{N,1}(rho/r) N_p(u; rho) drho/rho and
    N_p(grad I u; r) <= C int Q_{N,0}(rho/r) N_p(u; rho) drho/rho,
    plus the identity d_k I u = (1 - N) c_N^-1 R_k u against finite differences of I u.
    """
    report = SuiteReport(suite="potential bounds flat")
    radii = interior_radii(grid)
    n = grid.dim
    c_pot, c_grad = 0.0, 0.0
    for fid in field_ids:
        u = make_field(fid, grid)
        prof_u = seminorm_profile(u, p)
        iu = riesz_potential(u, cfg=cfg)
        fd = gradient_field(iu)
        pot_prof = seminorm_profile(iu, p)
        lhs = np.array([pot_prof.at(r) for r in radii])
        c_pot = max(c_pot, fit_constant(lhs, potential_bound_rhs(prof_u, radii, n)))
        grad_prof = seminorm_profile(vector_magnitude(fd), p)
        lhs = np.array([grad_prof.at(r) for r in radii])
        c_grad = max(c_grad, fit_constant(lhs, gradient_bound_rhs(prof_u, radii, n)))

        scale = (1 - n) / c_n(n)
        identity = [pv_transform(u, f"R{k}", None, cfg) * scale for k in range(1, n + 1)]
        err = gradient_mismatch(fd, identity, radii, p)
        report.check(f"d_k I u = (1-N) c_N^-1 R_k u for {fid}", err <= identity_tol, f"relative seminorm error {err:.3e}")
    for label, c in (("N_p(I u; r)", c_pot), ("N_p(grad I u; r)", c_grad)):
        ok = math.isfinite(c) and c > 0
        report.check(f"{label} bounded with one constant", ok, f"fitted C {c:.4g}")
    report.values.update({"C_potential": c_pot, "C_gradient": c_grad})
    logger.info(f"[Solver] potential bounds: C_potential={c_pot:.4g}, C_gradient={c_grad:.4g}")
    return report


def layer_gradient_check(
    surface: LipschitzSurface,
    grid: AnnularGrid,
    cfg: Optional[OperatorConfig] = None,
    tol: float = 1e-2,
    p: float = 2.0,
    field_ids: Sequence[str] = ("gaussian", "bump"),
) -> SuiteReport:
    """single_layer_grad against finite differences of single_layer"""
    report = SuiteReport(suite=f"layer gradient {surface.name}")
    radii = interior_radii(grid)
    for fid in field_ids:
        u = make_field(fid, grid)
        err = gradient_mismatch(single_layer_grad(u, surface, cfg), gradient_field(single_layer(u, surface, cfg)), radii, p)
        report.check(f"grad S u vs finite differences for {fid}", err <= tol, f"relative seminorm error {err:.3e}")
    return report


# ============================================================
# LOCALIZATION
# ============================================================

def _localized_rhs(
    u: ScalarField,
    f: ScalarField,
    surface: LipschitzSurface,
    r0: float,
    cfg: Optional[OperatorConfig],
):
    grid = u.grid
    spec_c = commutator_correction(u, surface, r0)
    comm = commutator_field(u, surface, spec_c, cfg)
    rho = np.sqrt(np.sum(grid.points ** 2, axis=-1))
    eta = cutoff(rho, r0)
    g = ScalarField(grid=grid, values=eta * f.values + comm.values, name=f"local rhs r0={r0:g}")
    f_grad = gradient_field(f)
    comm_grad = gradient_field(comm)
    slope = cutoff_slope(rho, r0)
    grads = []
    for k in range(grid.dim):
        unit = grid.points[..., k] / rho
        values = slope * unit * f.values + eta * f_grad[k].values + comm_grad[k].values
        grads.append(ScalarField(grid=grid, values=values, name=f"d{k + 1} {g.name}"))
    return spec_c, comm, g, grads


def local_estimate_experiment(
    u: ScalarField,
    f: ScalarField,
    surface: LipschitzSurface,
    r0: float,
    spec: MajorantSpec,
    cfg: Optional[OperatorConfig] = None,
    p: float = 2.0,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> SuiteReport:
    """
    Solve S w = eta f + [S, eta]u + S Psi, compare w with eta u + Psi, and fit the
    local bound constant for 0 < r < r0.
    """
    grid = u.grid
    report = SuiteReport(suite=f"localization {surface.name} r0={r0:g}")
    if not np.any(u.values) and not np.any(f.values):
        report.check("zero data", True, "u = 0 and f = 0")
        report.values["fitted_C"] = 0.0
        return report

    near = grid.dyadic_radii[grid.dyadic_radii <= r0 * (1 + 1e-9)]
    res = residual_profile(u, f, surface, cfg, p)
    f_prof = seminorm_profile(f, p)
    res_rel = float(np.max(relative_residual(res, f_prof, near), initial=0.0))
    report.check("S u = f inside 2 r0", res_rel <= 2e-2, f"relative residual {res_rel:.3e}")

    spec_c, comm, g, grads = _localized_rhs(u, f, surface, r0, cfg)
    report.check("moment cancellation", spec_c.moment_residual <= 1e-6, f"residual {spec_c.moment_residual:.2e}")

    w, solve = picard_solve(g, surface, cfg, tol=tol, max_iter=max_iter, spec=spec, p=p,
                            f_grad=grads, check_membership=False)
    rho = np.sqrt(np.sum(grid.points ** 2, axis=-1))
    target = ScalarField(grid=grid, values=cutoff(rho, r0) * u.values + spec_c.psi.values, name="eta u + Psi")
    diff_prof = seminorm_profile(w - target, p)
    target_prof = seminorm_profile(target, p)
    scale = max(float(np.max(target_prof.values, initial=0.0)), 1e-300)
    mismatch = float(np.max(diff_prof.values, initial=0.0)) / scale
    report.check("w = eta u + Psi", mismatch <= 2e-2, f"relative seminorm mismatch {mismatch:.3e}")

    radii = near[near >= 4.0 * grid.r_min]
    radii = radii[radii < r0 * (1 - 1e-9)]
    zeta = profile_from_seminorms(seminorm_profile(vector_magnitude(gradient_field(f)), p))
    f_log = profile_from_seminorms(f_prof)
    u_xp = xp_norm(u, p).value
    u_prof = seminorm_profile(u, p)
    lhs = np.array([u_prof.at(r) for r in radii])
    rhs = np.array([bound_thm3(spec, zeta, u_xp, f_log, r, r0) for r in radii])
    fitted = fit_constant(lhs, rhs)
    report.check("local bound constant finite", math.isfinite(fitted), f"fitted C = {fitted:.4g}")
    report.values.update({
        "r0": r0, "fitted_C": fitted, "moment_residual": spec_c.moment_residual,
        "gamma": spec_c.gamma.tolist(), "mismatch": mismatch, "solve_iterations": solve.iterations,
    })
    return report


def commutator_regimes(
    u: ScalarField,
    surface: LipschitzSurface,
    r0: float,
    cfg: Optional[OperatorConfig] = None,
    p: float = 2.0,
) -> SuiteReport:
    """
    N_p(grad([S, eta]u + S Psi); r) against C (r + Lambda(r)) ||u||_X (r <= r0/2),
    C ||u||_X (r0/2 < r <= 4 r0) and C r^-N ||u||_X (r > 4 r0), one fitted C per regime.
    """
    grid = u.grid
    report = SuiteReport(suite=f"commutator {surface.name} r0={r0:g}")
    spec_c = commutator_correction(u, surface, r0)
    comm = commutator_field(u, surface, spec_c, cfg)
    prof = seminorm_profile(vector_magnitude(gradient_field(comm)), p)
    xp = xp_norm(u, p).value
    radii = interior_radii(grid)
    lhs = np.array([prof.at(r) for r in radii])
    lam = np.zeros_like(radii) if surface.flat else np.asarray(lip_modulus(surface, radii), dtype=float)
    regimes = {
        "r <= r0/2": (radii <= r0 / 2, (radii + lam) * xp),
        "r0/2 < r <= 4 r0": ((radii > r0 / 2) & (radii <= 4 * r0), np.full_like(radii, xp)),
        "r > 4 r0": (radii > 4 * r0, radii ** -grid.dim * xp),
    }
    for name, (mask, rhs) in regimes.items():
        if not np.any(mask):
            continue
        c = fit_constant(lhs[mask], rhs[mask])
        report.check(f"commutator regime {name}", math.isfinite(c), f"fitted C = {c:.4g}")
        report.values[f"C {name}"] = c
    return report


def constant_stability(name: str, fitted: Dict[float, Dict[str, float]], width: float = 0.5) -> SuiteReport:
    """Each constant fitted at every r0 must stay within (max - min)/max <= width"""
    report = SuiteReport(suite=f"constant stability {name}")
    if len(fitted) < 2:
        return report
    keys = set.intersection(*(set(v) for v in fitted.values()))
    for key in sorted(keys):
        values = [fitted[r0][key] for r0 in fitted]
        hi, lo = max(values), min(values)
        spread = 0.0 if hi == 0 else (hi - lo) / hi
        report.add(InequalityLine(
            name=f"{key} stable across r0", points=len(values), max_ratio=spread, margin=width - spread,
            passed=spread <= width, note=", ".join(f"{v:.4g}" for v in values),
        ))
    return report


# ============================================================
# DECAY EXPERIMENTS
# ============================================================

def threshold_radius(surface: LipschitzSurface, grid: AnnularGrid, alpha: float, c1: float) -> float:
    """Largest grid radius r1 with Lambda(r) <= alpha/(2 c1) for every grid radius r < r1 (0 if none)"""
    if surface.flat:
        return float(grid.r_max)
    ok = np.asarray(lip_modulus(surface, grid.edges), dtype=float) <= alpha / (2.0 * c1)
    if not ok[0]:
        return 0.0
    bad = np.flatnonzero(~ok)
    return float(grid.edges[bad[0] - 1]) if bad.size else float(grid.edges[-1])


def inner_slope(profile: SeminormProfile, grid: AnnularGrid, octaves: int = 2) -> float:
    """Least-squares slope of log N_p(u; r) against log r over the inner octaves above 4 r_min"""
    lo = 4.0 * grid.r_min
    hi = lo * 2.0 ** octaves
    mask = (profile.radii >= lo * (1 - 1e-9)) & (profile.radii <= hi * (1 + 1e-9)) & (profile.values > 0)
    if mask.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(profile.radii[mask]), np.log(profile.values[mask]), 1)[0])


def alpha_decay_experiment(
    surface: LipschitzSurface,
    alpha: float,
    spec: MajorantSpec,
    grid: AnnularGrid,
    cfg: Optional[OperatorConfig] = None,
    r0: float = 1.0,
    p: float = 2.0,
    tol: float = 1e-8,
    max_iter: int = 30,
    localize: bool = True,
) -> SuiteReport:
    """
    f with N_p(grad f; r) ~ r^-alpha near 0: solve, fit the inner-octave slope of
    N_p(u; r) and require slope >= -alpha - 0.2.
    """
    if not 0.0 < alpha < spec.M:
        raise DomainError(f"alpha must lie in (0, M = {spec.M:.3f})")
    report = SuiteReport(suite=f"alpha decay {surface.name} alpha={alpha:g}")
    f = power_field(grid, alpha, r0)
    f_grad = gradient_field(f)
    y1p = y1p_norm(f, f_grad, p)
    y1p0 = y1p0_norm(f_grad, p)
    report.check("f in Y^{1,p}_0", y1p0.finite, f"norm {y1p0.value:.4g}, Y^{{1,p}} norm {y1p.value:.4g}")
    report.values.update({"y1p_norm": y1p.value, "y1p0_norm": y1p0.value})
    u, solve = picard_solve(f, surface, cfg, tol=tol, max_iter=max_iter, spec=spec, p=p)
    slope = inner_slope(solve.solution_seminorms, grid)
    report.check(f"inner slope >= -{alpha:g} - 0.2", slope >= -alpha - 0.2, f"slope {slope:.4f}")
    r1 = threshold_radius(surface, grid, alpha, spec.c1)
    report.values.update({"alpha": alpha, "slope": slope, "threshold_radius": r1,
                          "solve_verdict": solve.verdict})
    if localize:
        local = local_estimate_experiment(u, f, surface, r0, spec, cfg, p, tol, max_iter)
        report.values["local_fitted_C"] = local.values.get("fitted_C")
        for line in local.lines:
            report.add(line)
    logger.info(f"[Solver] alpha={alpha:g} on {surface.name}: slope {slope:.3f}, threshold radius {r1:g}")
    return report


def dini_experiment(
    surface: LipschitzSurface,
    spec: MajorantSpec,
    grid: AnnularGrid,
    cfg: Optional[OperatorConfig] = None,
    f_id: str = "gaussian",
    p: float = 2.0,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> SuiteReport:
    """Summable Lambda(nu)/nu: inner-octave seminorms of u stay within 2x of their median"""
    report = SuiteReport(suite=f"dini {surface.name}")
    f = make_field(f_id, grid)
    _, solve = picard_solve(f, surface, cfg, tol=tol, max_iter=max_iter, spec=spec, p=p)
    prof = solve.solution_seminorms
    lo = 4.0 * grid.r_min
    mask = (prof.radii >= lo * (1 - 1e-9)) & (prof.radii <= lo * 4.0 * (1 + 1e-9))
    vals = prof.values[mask]
    median = float(np.median(vals)) if vals.size else 0.0
    spread = float(np.max(np.maximum(vals / median, median / np.maximum(vals, 1e-300)))) if median > 0 else 1.0
    report.check("inner seminorms bounded", spread <= 2.0, f"max deviation factor {spread:.3f}")
    t = profile_from_seminorms(prof).t
    report.values.update({"dini_bound": dini_bound(spec, t), "spread": spread})
    return report
