"""Tools for running benchmark experiments and retrieving their records."""

from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any

from mcp.shared.exceptions import McpError
from mcp.types import INTERNAL_ERROR, ErrorData, ToolAnnotations
from pydantic import Field

from lspi_lqr.experiment_cache import get_cache_dir, get_cache_key
from lspi_lqr.harness.config import ExperimentConfig, OutputFormat, Preset, resolve_config
from lspi_lqr.harness.experiments import (
    ExperimentResult,
    run_offline_experiment,
    run_online_experiment,
)
from lspi_lqr.harness.records import (
    DEFAULT_QUANTILES,
    aggregate_percentiles,
    write_records_csv,
    write_records_json,
    write_summary_csv,
)
from lspi_lqr.logger import setup_logger
from lspi_lqr.shared import local_experiment_cache, mcp

# Create a default project logger
logger = setup_logger()


@dataclass
class SummaryRowOutput:
    """One row of a percentile summary."""

    algorithm: Annotated[str, Field(description="Algorithm tag.")]
    metric: Annotated[str, Field(description="Recorded metric.")]
    step: Annotated[int, Field(description="Simulation step of the measurement.")]
    count: Annotated[int, Field(description="Number of trials with a value at this step.")]
    quantiles: Annotated[
        list[float], Field(description="Nearest-rank quantiles over the trials.")
    ]


@dataclass
class ExperimentOutput:
    """Output of the run_offline_benchmark and run_online_benchmark tools."""

    from_cache: Annotated[
        bool, Field(description="Whether the experiment had already been run.")
    ]
    experiment_key: Annotated[
        str, Field(description="The unique identifier of the experiment in the local cache.")
    ]
    records: Annotated[int, Field(description="Number of metric records produced.")]
    failures: Annotated[int, Field(description="Number of trials that recorded a failure.")]


def _run(
    kind: str,
    preset: Preset,
    overrides: dict[str, Any],
    runner: Callable[[ExperimentConfig], ExperimentResult],
) -> ExperimentOutput:
    cfg: ExperimentConfig = resolve_config(preset, None, overrides)
    # parallel workers are not spawned from inside the server
    cfg = cfg.model_copy(update={"jobs": 1})
    key = get_cache_key({"experiment": kind, **cfg.model_dump(mode="json")})
    if key in local_experiment_cache:
        logger.info(f"{kind} experiment {key} has previously been run.")
        result = local_experiment_cache[key]
        from_cache = True
    else:
        result = runner(cfg)
        local_experiment_cache[key] = result
        from_cache = False
    failures = sum(1 for r in result.records if r.metric == "failure")
    return ExperimentOutput(from_cache, key, len(result.records), failures)


@mcp.tool(
    title="Run the offline benchmark",
    annotations=ToolAnnotations(readOnlyHint=False, destructiveHint=False),
)
def run_offline_benchmark(
    algorithms: Annotated[
        list[str] | None,
        Field(
            description=(
                "Algorithms among nominal, pg_simple, pg_vf, dfo, lspi_v1, lspi_v2 and optimal."
                " Defaults to all but optimal."
            )
        ),
    ] = None,
    trials: Annotated[int, Field(description="Number of trials.", ge=1, le=1000)] = 5,
    budget: Annotated[
        int, Field(description="Simulation steps per trial.", ge=0, le=10_000_000)
    ] = 100_000,
    seed: Annotated[int, Field(description="Root seed.", ge=0)] = 0,
) -> ExperimentOutput:
    """Run the non-adaptive comparison on the offline instance and cache its records.

    The records hold the relative cost error (J(K) - J_star) / J_star of each
    algorithm at equally spaced checkpoints of the step budget.
    """
    try:
        overrides: dict[str, Any] = {"trials": trials, "budget": budget, "seed": seed}
        if algorithms is not None:
            overrides["algorithms"] = algorithms
        return _run("offline", Preset.OFFLINE_PAPER, overrides, run_offline_experiment)
    except Exception as e:
        logger.exception("Error running the offline benchmark")
        raise McpError(
            ErrorData(code=INTERNAL_ERROR, message=f"Unexpected error: {e!s}")
        ) from e


@mcp.tool(
    title="Run the online benchmark",
    annotations=ToolAnnotations(readOnlyHint=False, destructiveHint=False),
)
def run_online_benchmark(
    algorithms: Annotated[
        list[str] | None,
        Field(description="Algorithms among lspi_adaptive, nominal_adaptive and optimal."),
    ] = None,
    trials: Annotated[int, Field(description="Number of trials.", ge=1, le=1000)] = 5,
    horizon: Annotated[
        int, Field(description="Adaptive steps after the warm start.", ge=0, le=1_000_000)
    ] = 10_000,
    seed: Annotated[int, Field(description="Root seed.", ge=0)] = 0,
) -> ExperimentOutput:
    """Run the adaptive comparison on the marginally unstable instance and cache its records.

    The records hold the cumulative regret and the relative cost error of the
    gain in use at equally spaced checkpoints.
    """
    try:
        overrides: dict[str, Any] = {"trials": trials, "horizon": horizon, "seed": seed}
        if algorithms is not None:
            overrides["algorithms"] = algorithms
        return _run("online", Preset.ONLINE_PAPER, overrides, run_online_experiment)
    except Exception as e:
        logger.exception("Error running the online benchmark")
        raise McpError(
            ErrorData(code=INTERNAL_ERROR, message=f"Unexpected error: {e!s}")
        ) from e


def _cached(experiment_key: str) -> ExperimentResult:
    if experiment_key not in local_experiment_cache:
        doc_keys = ", ".join(local_experiment_cache.keys())
        raise ValueError(
            f"experiment-key: {experiment_key} is not found. Available experiment-keys: {doc_keys}"
        )
    return local_experiment_cache[experiment_key]


@dataclass
class ExperimentSummaryOutput:
    """Output of the get_experiment_summary tool."""

    experiment_key: Annotated[
        str, Field(description="The unique identifier of the experiment in the local cache.")
    ]
    quantile_levels: Annotated[list[float], Field(description="Requested quantile levels.")]
    rows: Annotated[
        list[SummaryRowOutput],
        Field(description="Quantiles per algorithm, metric and step."),
    ]


@mcp.tool(
    title="Get the percentile summary of an experiment",
    annotations=ToolAnnotations(readOnlyHint=True, destructiveHint=False),
)
def get_experiment_summary(
    experiment_key: Annotated[
        str, Field(description="The unique identifier of the experiment in the local cache.")
    ],
    quantiles: Annotated[
        list[float] | None,
        Field(description="Quantile levels in [0, 1]. Defaults to 0.1, 0.5 and 0.9."),
    ] = None,
) -> ExperimentSummaryOutput:
    """Nearest-rank quantiles of every recorded metric across the trials of an experiment."""
    try:
        levels = tuple(quantiles) if quantiles else DEFAULT_QUANTILES
        result = _cached(experiment_key)
        rows = [
            SummaryRowOutput(r.algorithm, r.metric, r.step, r.count, list(r.values))
            for r in aggregate_percentiles(result.records, levels)
        ]
        return ExperimentSummaryOutput(experiment_key, list(levels), rows)
    except Exception as e:
        logger.exception(f"Error summarizing experiment: {experiment_key}")
        raise McpError(
            ErrorData(code=INTERNAL_ERROR, message=f"Unexpected error: {e!s}")
        ) from e


@dataclass
class SaveExperimentOutput:
    """Output of the save_experiment_records tool."""

    records_file: Annotated[str, Field(description="Path of the records file.")]
    summary_file: Annotated[str, Field(description="Path of the percentile summary CSV.")]


@mcp.tool(
    title="Save experiment records",
    # overwrites earlier saves of the same experiment
    annotations=ToolAnnotations(readOnlyHint=False, destructiveHint=True),
)
def save_experiment_records(
    experiment_key: Annotated[
        str, Field(description="The unique identifier of the experiment in the local cache.")
    ],
    output_format: Annotated[
        OutputFormat, Field(description="Format of the records file, csv or json.")
    ] = OutputFormat.CSV,
) -> SaveExperimentOutput:
    """Write the records and percentile summary of a cached experiment to the cache directory."""
    try:
        result = _cached(experiment_key)
        cache_dir: Path = get_cache_dir()
        records_file = cache_dir / f"{experiment_key}.{output_format.value}"
        summary_file = cache_dir / f"{experiment_key}.summary.csv"
        if output_format is OutputFormat.JSON:
            write_records_json(result.records, records_file)
        else:
            write_records_csv(result.records, records_file)
        write_summary_csv(aggregate_percentiles(result.records), summary_file)
        logger.info(f"saved experiment {experiment_key} to {records_file}")
        return SaveExperimentOutput(str(records_file), str(summary_file))
    except Exception as e:
        logger.exception(f"Error saving experiment: {experiment_key}")
        raise McpError(
            ErrorData(code=INTERNAL_ERROR, message=f"Unexpected error: {e!s}")
        ) from e
