# main.py
"""
layerpot experiment runner
==========================
Numerics for the single layer potential equation S u = f on Lipschitz graph surfaces.

Commands:
- solve:            Picard solve for a catalog surface and right-hand side, with bound and decay checks
- verify-kernels:   quotient-difference and difference-kernel inequalities, gradient vs finite differences
- verify-majorant:  kernel estimates, majorant inequalities, integrated estimates, minimal solution
- verify-operators: flat inversion, potential bounds, gradient identities, operator-norm scaling in Lambda
- local:            localization near the origin and the commutator regimes
- alpha-decay:      decay of solutions for f with N_p(grad f; r) ~ r^-alpha, plus the Dini case
- flat-oracle:      quadrature vs the spectral multiplier oracle, sum_k R_k R_k = -1
- report:           summary of a finished run directory

Exit codes: 0 pass, 1 assertion failure, 2 configuration error.
"""
import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from config import settings
from models.report_models import InequalityLine, SuiteReport
from models.run_models import COMMANDS, RunConfig, load_run_config
from services.catalog import make_field
from services.errors import (
    AdmissibilityError,
    ConfigurationError,
    InfeasibleConstantsError,
    LayerPotError,
    MembershipError,
    MissingArtifactError,
)
from services.geometry import LipschitzSurface, fd_gradient_check, make_surface, verify_kernel_bounds
from services.grid import (
    AnnularGrid,
    ScalarField,
    acceptance_radii,
    field_to_csv,
    gradient_field,
    seminorm_profile,
    vector_magnitude,
)
from services.majorant import (
    choose_constants,
    log_profile_to_csv,
    majorant_v,
    minimal_sigma,
    kk_apply,
    integrated_constant_trend,
    make_log_profile,
    profile_from_seminorms,
    spec_for_surface,
    surface_modulus,
    uniqueness_contraction,
    verify_lemma_33,
    verify_lemma_34_36,
    verify_lemma_41,
    with_modulus,
)
from services.operators import empirical_operator_norms, pv_transform, r_solve, riesz_potential
from services.oracle import flat_multiplier_oracle, oracle_mismatch, riesz_square_residual
from services.reporting import ITERATIONS, PER_RADIUS, RunWriter, render_report, write_failure_list
from services.solver import (
    alpha_decay_experiment,
    dini_experiment,
    estimate_ck,
    k0_profile,
    layer_gradient_check,
    commutator_regimes,
    constant_stability,
    local_estimate_experiment,
    picard_solve,
    potential_bounds_check,
    relative_residual,
    residual_profile,
    uniqueness_check,
)

logger = logging.getLogger("layerpot")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

CONFIG_ERRORS = (ConfigurationError, AdmissibilityError, InfeasibleConstantsError, MembershipError, ValidationError)


def setup_logging():
    os.makedirs(settings.LOG_DIR, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(settings.LOG_DIR, 'app.log')),
            logging.StreamHandler()
        ]
    )


# ============================================================
# SHARED SETUP
# ============================================================

def _grid(cfg: RunConfig) -> AnnularGrid:
    return AnnularGrid.from_config(cfg.grid)


def _surface(cfg: RunConfig, surface_id: Optional[str] = None) -> LipschitzSurface:
    return make_surface(surface_id or cfg.surface_id, cfg.grid.dim, cfg.seed)


def _lambda_star(cfg: RunConfig) -> float:
    return settings.LAMBDA_STAR if cfg.lambda_star is None else cfg.lambda_star


def _gate(surface: LipschitzSurface, cfg: RunConfig):
    """Admissibility before any expensive work"""
    if not surface.flat and surface.lambda0 > _lambda_star(cfg) + 1e-12:
        raise AdmissibilityError(
            f"lambda0 exceeds admissible threshold: {surface.lambda0:g} > {_lambda_star(cfg):g}"
        )


def _constants(cfg: RunConfig, surface: LipschitzSurface, grid: AnnularGrid, writer: RunWriter):
    """C_K estimate on this grid and the admissible constants for the surface"""
    c_k, details = estimate_ck(surface, grid, cfg.operator, cfg.solver.ck_fields, cfg.seed, cfg.p)
    spec = spec_for_surface(surface, c_k, _lambda_star(cfg))
    writer.ck_estimate = c_k
    writer.constants.update({"ck_details": details, **spec.describe()})
    return spec


def _kind(surface_id: str, default: str) -> str:
    kind = surface_id.split(":", 1)[0]
    return default if kind == "flat" else kind


# ============================================================
# SUITES
# ============================================================

def run_solve(cfg: RunConfig, writer: RunWriter):
    grid = _grid(cfg)
    surface = _surface(cfg)
    _gate(surface, cfg)
    spec = _constants(cfg, surface, grid, writer)
    f = make_field(cfg.f_id, grid)
    logger.info(f"[CLI solve] surface={surface.name} f={f.name} {grid.describe()}")

    u, solve = picard_solve(f, surface, cfg.operator, tol=cfg.tol, max_iter=cfg.max_iter, spec=spec, p=cfg.p)
    writer.write_rows(PER_RADIUS, solve.per_radius())
    writer.write_rows(ITERATIONS, [rec.model_dump() for rec in solve.records])
    writer.write_profile("solution_seminorms.csv", solve.solution_seminorms)
    writer.write_profile("residual_seminorms.csv", solve.residual_profiles[-1])
    field_to_csv(u, writer.path("solution.csv"))
    writer.register("solution.csv")

    report = SuiteReport(suite=f"solve {surface.name} f={f.name}")
    report.check("converged", solve.converged, f"{solve.verdict} after {solve.iterations} iterations")
    if solve.converged and len(solve.records) > 2:
        report.check("monotone residual after iteration 2", solve.monotone_residual, "residual sup per iteration")
    worst = float(np.max(solve.relative_residual, initial=0.0))
    report.check("relative residual <= 1e-2 at acceptance radii", worst <= 1e-2, f"max {worst:.3e}")
    report.check("existence bound constant finite", math.isfinite(solve.fitted_constant),
                 f"fitted C = {solve.fitted_constant:.4g}")
    rates = solve.contraction_estimates
    if rates:
        rate = float(np.median(rates))
        report.add(InequalityLine(
            name="empirical contraction < 1", points=len(rates), max_ratio=rate, margin=1.0 - rate,
            passed=rate < 1.0, note=f"constant inequality margin {1.0 - spec.constant_inequality:.3f}",
        ))
    report.values.update({
        "iterations": solve.iterations, "verdict": solve.verdict, "fitted_C": solve.fitted_constant,
        "acceptance_radii": solve.radii.tolist(),
    })
    writer.add_suite(report)
    writer.add_suite(solve.decay)
    writer.add_suite(uniqueness_check(surface, grid, cfg.operator, spec, cfg.p))


def run_verify_kernels(cfg: RunConfig, writer: RunWriter):
    kind = _kind(cfg.surface_id, "wave")
    stats: Dict[float, float] = {}
    for eps in (0.02, 0.04, 0.05):
        surface = _surface(cfg, f"{kind}:{eps:g}")
        bounds = verify_kernel_bounds(surface, cfg.n_samples, cfg.seed)
        report = SuiteReport(suite=f"kernel bounds {surface.name}")
        for name, ratio in bounds.max_ratios.items():
            report.add(InequalityLine(
                name=name, points=bounds.counts.get(name, 0), max_ratio=ratio, margin=1.0 - ratio,
                passed=math.isfinite(ratio), note="finite ratio",
            ))
        report.check("quotient bounds", bounds.quotient_violations == 0, f"{bounds.quotient_violations} violations")
        for label, holds in bounds.labeling_holds.items():
            report.add(InequalityLine(name=f"labeling: {label}", points=bounds.n_samples, max_ratio=0.0 if holds else 1.0,
                                      margin=1.0 if holds else 0.0, passed=holds, asserted=False))
        fd_err = fd_gradient_check(surface, max(1, cfg.n_samples // 10), cfg.seed)
        report.check("gradient vs finite differences", fd_err <= 1e-6, f"max relative error {fd_err:.2e}")
        report.values.update({"scaling_statistic": bounds.scaling_statistic, "skipped": bounds.skipped})
        stats[eps] = bounds.scaling_statistic
        writer.add_suite(report)

    scaling = SuiteReport(suite=f"kernel bound scaling {kind}")
    if stats[0.02] > 0:
        ratio = stats[0.04] / stats[0.02]
        scaling.check("|G| statistic scales as eps^2", 2.0 <= ratio <= 8.0, f"ratio {ratio:.3f} (expected 4)")
        scaling.values["ratio_0.04_0.02"] = ratio
    writer.add_suite(scaling)


def run_verify_majorant(cfg: RunConfig, writer: RunWriter):
    grid = _grid(cfg)
    surface = _surface(cfg)
    _gate(surface, cfg)
    spec = _constants(cfg, surface, grid, writer)
    lambdas = sorted({0.0, 0.02, 0.05} | ({round(surface.lambda0, 12)} if not surface.flat else set()))

    for lam0 in lambdas:
        if lam0 > _lambda_star(cfg) + 1e-12:
            continue
        lam_spec = choose_constants(grid.dim, lam0, spec.c_k, lambda_star=_lambda_star(cfg), label=f"lambda0={lam0:g}")
        writer.add_suite(verify_lemma_33(lam_spec, cfg.n_pairs, cfg.seed))
        writer.add_suite(verify_lemma_41(lam_spec))
    writer.add_suite(integrated_constant_trend(grid.dim))

    for fid in ("decay1", "gaussian", "bump"):
        f = make_field(fid, grid)
        zeta = profile_from_seminorms(seminorm_profile(vector_magnitude(gradient_field(f)), cfg.p), name=f"grad {fid}")
        kz = k0_profile(f, surface, cfg.operator, cfg.p)
        report = verify_lemma_34_36(spec, zeta, kz)
        report.suite = f"{report.suite} f={fid}"
        sigma, iterations = minimal_sigma(spec, kz, max_iter=cfg.solver.sigma_max_iter)
        v = majorant_v(spec, zeta)
        ok = bool(np.all(sigma.values <= v.values * 1.02 + 1e-300))
        report.check("minimal solution <= majorant", ok, f"{iterations} iterations")
        writer.add_suite(report)
        log_profile_to_csv(v, writer.path(f"majorant_{fid}.csv"))
        writer.register(f"majorant_{fid}.csv")

    zero = make_log_profile(-6.0, 6.0, math.log(2.0) / cfg.grid.radial_per_octave, name="zero")
    writer.add_suite(uniqueness_contraction(spec, 3, zero.t))
    writer.add_suite(verify_lemma_34_36(spec, zero, kk_apply(spec, zero)))


def run_verify_operators(cfg: RunConfig, writer: RunWriter):
    grid = _grid(cfg)
    flat = make_surface("flat", grid.dim)
    inversion = SuiteReport(suite="flat inversion")
    for fid in ("decay1", "gaussian", "bump"):
        f = make_field(fid, grid)
        u = r_solve(f, cfg.operator, p=cfg.p)
        res = residual_profile(u, f, flat, cfg.operator, cfg.p)
        rel = float(np.max(relative_residual(res, seminorm_profile(f, cfg.p), acceptance_radii(grid)), initial=0.0))
        inversion.check(f"S R f = f for {fid}", rel <= 2e-2, f"relative residual {rel:.3e}")
        writer.write_profile(f"flat_residual_{fid}.csv", res)
    writer.add_suite(inversion)

    writer.add_suite(potential_bounds_check(grid, cfg.operator, cfg.p))
    writer.add_suite(layer_gradient_check(flat, grid, cfg.operator, tol=1e-2, p=cfg.p))
    writer.add_suite(layer_gradient_check(_surface(cfg, "tilt:0.05"), grid, cfg.operator, tol=2e-2, p=cfg.p))

    kind = _kind(cfg.surface_id, "tilt")
    surfaces = [_surface(cfg, f"{kind}:{eps:g}") for eps in cfg.epsilons]
    norms = empirical_operator_norms(surfaces, grid, 1.0, 4, cfg.operator, cfg.seed, cfg.p)
    scaling = SuiteReport(suite=f"operator norm scaling {kind}")
    for attr, target, width in (("difference_exponent", 2.0, 0.4), ("top_exponent", 1.0, 0.3)):
        value = getattr(norms, attr)
        ok = value is not None and abs(value - target) <= width
        scaling.check(f"{attr} = {target:g} +/- {width:g}", ok, "no fit" if value is None else f"fitted {value:.3f}")
    scaling.values.update({"difference": norms.difference_ratio, "top": norms.top_ratio, "moduli": norms.moduli})
    writer.add_suite(scaling)


def run_local(cfg: RunConfig, writer: RunWriter):
    grid = _grid(cfg)
    surface = _surface(cfg)
    _gate(surface, cfg)
    spec = _constants(cfg, surface, grid, writer)
    f = make_field(cfg.f_id, grid)
    u, solve = picard_solve(f, surface, cfg.operator, tol=cfg.tol, max_iter=cfg.max_iter, spec=spec, p=cfg.p)
    fitted: Dict[float, Dict[str, float]] = {}
    for r0 in cfg.r0_values:
        local = local_estimate_experiment(u, f, surface, r0, spec, cfg.operator, cfg.p, cfg.tol, cfg.max_iter)
        regimes = commutator_regimes(u, surface, r0, cfg.operator, cfg.p)
        writer.add_suite(local)
        writer.add_suite(regimes)
        fitted[r0] = {"local": local.values.get("fitted_C", 0.0), **regimes.values}

    writer.add_suite(constant_stability(surface.name, fitted))


def run_alpha_decay(cfg: RunConfig, writer: RunWriter):
    grid = _grid(cfg)
    surface = _surface(cfg, cfg.surface_id if cfg.surface_id != "flat" else "cone:0.05")
    _gate(surface, cfg)
    spec = _constants(cfg, surface, grid, writer)
    flat = make_surface("flat", grid.dim)
    flat_spec = with_modulus(spec, surface_modulus(flat), label="flat")
    for alpha in cfg.alphas:
        writer.add_suite(alpha_decay_experiment(surface, alpha, spec, grid, cfg.operator, p=cfg.p,
                                                tol=cfg.tol, max_iter=cfg.max_iter))
        writer.add_suite(alpha_decay_experiment(flat, alpha, flat_spec, grid, cfg.operator, p=cfg.p,
                                                tol=cfg.tol, max_iter=cfg.max_iter, localize=False))
    dini = _surface(cfg, "dini:0.02")
    dini_spec = with_modulus(spec, surface_modulus(dini), label=dini.name)
    writer.add_suite(dini_experiment(dini, dini_spec, grid, cfg.operator, "gaussian", cfg.p, cfg.tol, cfg.max_iter))


def run_flat_oracle(cfg: RunConfig, writer: RunWriter):
    grid = _grid(cfg)
    report = SuiteReport(suite="flat oracle")
    for name, fn in (
        ("gaussian", lambda x: np.exp(-np.sum(np.asarray(x) ** 2, axis=-1))),
        ("shifted gaussian", lambda x: np.exp(-2.0 * np.sum((np.asarray(x) - np.array([0.5, -0.25])) ** 2, axis=-1))),
    ):
        u = ScalarField.from_function(grid, fn, name=name)
        for op in ("I", "R1", "R2"):
            quad = riesz_potential(u, cfg=cfg.operator) if op == "I" else pv_transform(u, op, None, cfg.operator)
            result = flat_multiplier_oracle(u, op, cfg.operator)
            err = oracle_mismatch(quad, result, cfg.p)
            report.check(f"{op} vs oracle on {name}", err <= 1e-2, f"relative seminorm error {err:.3e}")
            if result.calibration is not None:
                report.values["convention"] = result.calibration.convention
                report.values["kappa"] = result.calibration.kappa
        square = riesz_square_residual(u)
        report.check(f"sum_k R_k R_k u = -u on {name}", square <= 1e-2, f"relative max error {square:.3e}")
    writer.add_suite(report)


SUITES: Dict[str, Callable[[RunConfig, RunWriter], None]] = {
    "solve": run_solve,
    "verify-kernels": run_verify_kernels,
    "verify-majorant": run_verify_majorant,
    "verify-operators": run_verify_operators,
    "local": run_local,
    "alpha-decay": run_alpha_decay,
    "flat-oracle": run_flat_oracle,
}


# ============================================================
# DRIVER
# ============================================================

def run(cfg: RunConfig) -> int:
    """Execute one suite and persist its artifacts; returns the exit code"""
    writer = RunWriter(cfg.output_dir)
    logger.info(f"[CLI {cfg.command}] start, output in {cfg.output_dir}, workers={settings.worker_count}")
    try:
        SUITES[cfg.command](cfg, writer)
    except CONFIG_ERRORS as e:
        logger.error(f"[CLI {cfg.command}] configuration error: {e}")
        writer.finalize(cfg, extra_failures=[str(e)])
        return EXIT_CONFIG
    except LayerPotError as e:
        logger.error(f"[CLI {cfg.command}] run failed: {e}")
        writer.finalize(cfg, extra_failures=[str(e)])
        return EXIT_FAILED
    manifest = writer.finalize(cfg)
    failures = writer.failures
    logger.info(f"[CLI {cfg.command}] done, {len(manifest.artifacts)} artifacts, {len(failures)} failures")
    return EXIT_OK if not failures else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerpot", description="Single layer potential numerics")
    parser.add_argument("command", choices=list(COMMANDS) + ["report"])
    parser.add_argument("--config", type=Path, help="TOML config or manifest.json of a previous run")
    parser.add_argument("--out", type=Path, help="Output directory (report: the run directory to read)")
    parser.add_argument("--seed", type=int, help="Override the config seed")
    parser.add_argument("--threads", type=int, help="Worker cap (same as LAYERPOT_THREADS)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    if args.threads is not None:
        settings.THREADS = args.threads

    if args.command == "report":
        run_dir = args.out or Path(settings.OUTPUT_DIR) / "latest"
        try:
            print(render_report(run_dir))
        except MissingArtifactError as e:
            logger.error(f"[CLI report] {e}")
            return EXIT_CONFIG
        return EXIT_OK

    out = args.out or Path(settings.OUTPUT_DIR) / args.command
    try:
        if args.config is not None:
            cfg = load_run_config(args.config, command=args.command, seed=args.seed, output_dir=args.out)
            out = cfg.output_dir
        else:
            cfg = RunConfig(command=args.command, output_dir=out, **({"seed": args.seed} if args.seed is not None else {}))
    except (ValidationError, ConfigurationError, OSError) as e:
        logger.error(f"[CLI {args.command}] invalid configuration: {e}")
        write_failure_list(out, [f"configuration: {e}"])
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
