# models/run_models.py
"""
Run configuration models with documented ranges.
A run is described by one RunConfig, read from TOML (or from a manifest JSON).
"""
import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource


COMMANDS = (
    "solve",
    "verify-kernels",
    "verify-majorant",
    "verify-operators",
    "local",
    "alpha-decay",
    "flat-oracle",
)


# ============================================================
# NESTED MODELS
# ============================================================

class GridConfig(BaseModel):
    """Log-radial x angular discretization of R^N minus the origin"""
    dim: int = Field(2, description="Surface dimension N", ge=2, le=3)
    r_min: float = Field(2.0 ** -8, description="Innermost shell radius", gt=0)
    r_max: float = Field(2.0 ** 8, description="Outermost shell radius", gt=0)
    radial_per_octave: int = Field(8, description="Shells per octave (J)", ge=4, le=64)
    angular_count: int = Field(64, description="Angular nodes per shell (A)", ge=8, le=1024)

    @model_validator(mode="after")
    def check_range(self):
        if self.r_min >= self.r_max:
            raise ValueError("r_min must be smaller than r_max")
        if self.r_max < 4.0 * self.r_min:
            raise ValueError("grid must cover at least two octaves")
        return self


class OperatorConfig(BaseModel):
    """Quadrature controls for weakly singular and principal-value integrals"""
    pv_epsilon_factor: float = Field(
        0.5,
        description="Singular-disc radius as a multiple of the local node spacing",
        gt=0,
        le=0.5,
    )
    pv_extrapolation_levels: int = Field(
        3,
        description="Number of halved exclusion radii combined by Richardson extrapolation",
        ge=2,
        le=6,
    )
    near_singular_refinement: int = Field(
        4,
        description="Half-width (in cells) of the locally refined patch around each target",
        ge=1,
        le=8,
    )
    tail_correction: bool = Field(
        True,
        description="Add the inner-disc and outer monopole tails to weakly singular operators",
    )


class SolverConfig(BaseModel):
    """Picard iteration controls"""
    tol: float = Field(1e-8, description="Relative B-norm step tolerance", gt=0, lt=1)
    max_iter: int = Field(30, description="Maximum Picard iterations", ge=1, le=1000)
    sigma_max_iter: int = Field(500, description="Maximum iterations for the minimal solution", ge=1)
    ck_fields: int = Field(4, description="Random fields used to estimate C_K", ge=1, le=64)


# ============================================================
# RUN CONFIG
# ============================================================

class RunConfig(BaseSettings):
    """One experiment run: command, surface, right-hand side, grid and controls"""
    model_config = SettingsConfigDict(env_prefix="LAYERPOT_RUN_", extra="forbid")

    command: Literal[
        "solve",
        "verify-kernels",
        "verify-majorant",
        "verify-operators",
        "local",
        "alpha-decay",
        "flat-oracle",
    ] = Field(..., description="Suite to execute")
    surface_id: str = Field("flat", description="Surface catalog id, e.g. 'cone:0.05'")
    f_id: str = Field("decay1", description="Right-hand side catalog id")
    grid: GridConfig = Field(default_factory=GridConfig)
    operator: OperatorConfig = Field(default_factory=OperatorConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    p: float = Field(2.0, description="Seminorm exponent", gt=1)
    tol: float = Field(1e-8, description="Picard tolerance (mirrors solver.tol when set)", gt=0, lt=1)
    max_iter: int = Field(30, description="Picard iteration cap", ge=1, le=1000)
    seed: int = Field(7, description="Seed for every random draw in the run", ge=0)
    output_dir: Path = Field(Path("runs/latest"), description="Directory owned by this run")

    # Experiment-specific knobs
    lambda_star: Optional[float] = Field(None, description="Override of the admissibility threshold", gt=0, lt=1)
    n_samples: int = Field(10_000, description="Random samples for kernel-bound checks", ge=1)
    n_pairs: int = Field(1_000, description="Sampled (s, t) pairs for the majorant checks", ge=1)
    epsilons: List[float] = Field(
        default_factory=lambda: [0.01, 0.02, 0.04],
        description="Surface amplitudes for the scaling fits",
    )
    r0_values: List[float] = Field(default_factory=lambda: [0.5, 1.0], description="Localization radii")
    alphas: List[float] = Field(default_factory=lambda: [0.1, 0.5], description="Decay exponents")

    @field_validator("p")
    @classmethod
    def finite_p(cls, v):
        if v == float("inf"):
            raise ValueError("p must be finite")
        return v

    @model_validator(mode="after")
    def sync_solver(self):
        self.solver.tol = self.tol
        self.solver.max_iter = self.max_iter
        return self


def load_run_config(path: Path, **overrides) -> RunConfig:
    """
    Load a RunConfig from a TOML file or from a run manifest (JSON).

    Args:
        path: TOML config or manifest.json written by a previous run
        overrides: CLI-level overrides (seed, output_dir, command)

    Returns:
        Validated RunConfig
    """
    path = Path(path)
    if path.suffix == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        data = payload.get("config", payload)
    else:
        data = TomlConfigSettingsSource(RunConfig, toml_file=path)()
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**data)
