"""Experiment configuration: a flat, validated key-value document plus named presets."""

import enum
import json
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lspi_lqr.adaptive import InnerSolver
from lspi_lqr.baselines import (
    DFO_SIGMA_ETA,
    DFO_STEP,
    NOMINAL_SIGMA_U,
    PG_SIGMA_ETA,
    PG_STEP,
    PROJECTION_SCALE,
    ROLLOUT_HORIZON,
)
from lspi_lqr.errors import ConfigError
from lspi_lqr.harness.instances import InstanceName
from lspi_lqr.logger import setup_logger

# Create a default project logger
logger = setup_logger()


class Algorithm(str, enum.Enum):
    """Algorithms the harness can run."""

    NOMINAL = "nominal"
    PG_SIMPLE = "pg_simple"
    PG_VF = "pg_vf"
    DFO = "dfo"
    LSPI_V1 = "lspi_v1"
    LSPI_V2 = "lspi_v2"
    OPTIMAL = "optimal"
    LSPI_ADAPTIVE = "lspi_adaptive"
    NOMINAL_ADAPTIVE = "nominal_adaptive"


OFFLINE_ALGORITHMS = frozenset(
    {
        Algorithm.NOMINAL,
        Algorithm.PG_SIMPLE,
        Algorithm.PG_VF,
        Algorithm.DFO,
        Algorithm.LSPI_V1,
        Algorithm.LSPI_V2,
        Algorithm.OPTIMAL,
    }
)
ONLINE_ALGORITHMS = frozenset(
    {Algorithm.LSPI_ADAPTIVE, Algorithm.NOMINAL_ADAPTIVE, Algorithm.OPTIMAL}
)


class OutputFormat(str, enum.Enum):
    """Record file formats."""

    CSV = "csv"
    JSON = "json"


class ScheduleKind(str, enum.Enum):
    """Epoch length rules."""

    LINEAR = "linear"
    DOUBLING = "doubling"


class InnerRule(str, enum.Enum):
    """Inner iteration count rules."""

    STEP_THRESHOLDS = "step_thresholds"
    LINEAR_IN_EPOCH = "linear_in_epoch"


class Preset(str, enum.Enum):
    """Named experiment presets."""

    OFFLINE_PAPER = "offline-paper"
    ONLINE_PAPER = "online-paper"
    THEORY_ONLINE = "theory-online"


class ExperimentConfig(BaseModel):
    """Everything a run depends on; the resolved instance is echoed in the metadata file."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    instance: InstanceName = InstanceName.OFFLINE_PAPER
    instance_path: str | None = None
    algorithms: list[Algorithm] = Field(
        default_factory=lambda: [
            Algorithm.NOMINAL,
            Algorithm.PG_SIMPLE,
            Algorithm.PG_VF,
            Algorithm.DFO,
            Algorithm.LSPI_V1,
            Algorithm.LSPI_V2,
        ],
        min_length=1,
    )
    trials: int = Field(100, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)

    # offline runs
    budget: int = Field(1_000_000, ge=0)
    checkpoints: int = Field(20, ge=1)
    rollout_horizon: int = Field(ROLLOUT_HORIZON, ge=1)
    pg_sigma_eta: float = Field(PG_SIGMA_ETA, gt=0)
    pg_step: float = Field(PG_STEP, gt=0)
    dfo_sigma_eta: float = Field(DFO_SIGMA_ETA, gt=0)
    dfo_step: float = Field(DFO_STEP, gt=0)
    projection_scale: float = Field(PROJECTION_SCALE, gt=0)
    nominal_sigma_u: float = Field(NOMINAL_SIGMA_U, gt=0)
    lspi_sigma_eta: float = Field(1.0, gt=0)
    lspi_v1_iters: int = Field(15, ge=0)
    lspi_v2_iters: int = Field(3, ge=0)
    lspi_v2_rollout: int = Field(333_333, ge=1)
    mu: float | None = Field(None, gt=0)
    k0: list[list[float]] | None = None

    # online runs
    horizon: int | None = Field(10_000, ge=0)
    warm_start_steps: int = Field(2000, ge=0)
    warm_start_sigma_eta: float = Field(1.0, ge=0)
    count_warm_start_regret: bool = True
    schedule: ScheduleKind = ScheduleKind.LINEAR
    epoch_base: int = Field(10, ge=1)
    epochs: int | None = Field(None, ge=0)
    exploration_sigma0_sq: float | None = Field(0.01, ge=0)
    exploration_exponent: float = Field(2.0 / 3.0, ge=0)
    inner_rule: InnerRule = InnerRule.STEP_THRESHOLDS
    inner_solver: InnerSolver = InnerSolver.LSPI_V1
    reuse_history: bool = True
    k0_perturbation: float = Field(0.1, ge=0)

    # lstdq-sweep and pi-exact
    lstdq_horizons: list[int] = Field(default_factory=lambda: [10_000, 160_000], min_length=1)
    pi_iterations: int = Field(20, ge=0)

    # output
    output: str | None = None
    format: OutputFormat = OutputFormat.CSV
    jobs: int | None = Field(None, ge=1)


PRESETS: dict[Preset, dict[str, Any]] = {
    Preset.OFFLINE_PAPER: {
        "instance": "offline_paper",
        "algorithms": ["nominal", "pg_simple", "pg_vf", "dfo", "lspi_v1", "lspi_v2"],
        "trials": 100,
        "budget": 1_000_000,
    },
    Preset.ONLINE_PAPER: {
        "instance": "adaptive_dean",
        "algorithms": ["lspi_adaptive", "nominal_adaptive", "optimal"],
        "trials": 100,
        "horizon": 10_000,
        "warm_start_steps": 2000,
        "schedule": "linear",
        "epoch_base": 10,
        "exploration_sigma0_sq": 0.01,
        "exploration_exponent": 2.0 / 3.0,
        "inner_rule": "step_thresholds",
        "inner_solver": "lspi_v1",
        "reuse_history": True,
    },
    Preset.THEORY_ONLINE: {
        "instance": "adaptive_dean",
        "algorithms": ["lspi_adaptive"],
        "trials": 20,
        "horizon": None,
        "warm_start_steps": 0,
        "schedule": "doubling",
        "epoch_base": 500,
        "epochs": 8,
        "exploration_sigma0_sq": None,
        "exploration_exponent": 1.0 / 3.0,
        "inner_rule": "linear_in_epoch",
        "inner_solver": "lspi_v2",
        "reuse_history": False,
    },
}


def _validation_message(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        key = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{key}: {e['msg']}")
    return "; ".join(parts)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON config document into a plain mapping."""
    src = Path(path)
    try:
        data = json.loads(src.read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise ConfigError(f"config file {src} does not exist") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {src} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config file {src} must hold a JSON object")
    return data


def resolve_config(
    preset: Preset | None = None,
    config_path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Merge preset, config file and command-line overrides, in increasing precedence.

    Every key present in ``overrides`` wins, so an explicit ``None`` clears a preset value.
    """
    data: dict[str, Any] = {}
    if preset is not None:
        data.update(PRESETS[preset])
    if config_path is not None:
        data.update(load_config_file(config_path))
    if overrides:
        data.update(overrides)
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(f"invalid experiment config: {_validation_message(err)}") from err
    logger.debug(f"resolved experiment config: {cfg.model_dump_json()}")
    return cfg
