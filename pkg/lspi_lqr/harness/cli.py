"""Command-line interface of the experiment harness."""

import json
from pathlib import Path
from typing import Annotated, Any, NoReturn

import typer

from lspi_lqr.errors import LqrError
from lspi_lqr.harness.config import Algorithm, ExperimentConfig, OutputFormat, Preset, resolve_config
from lspi_lqr.harness.experiments import (
    ExperimentResult,
    run_lstdq_sweep,
    run_offline_experiment,
    run_online_experiment,
    run_pi_exact,
)
from lspi_lqr.harness.records import (
    DEFAULT_QUANTILES,
    aggregate_percentiles,
    read_records_csv,
    read_records_json,
    write_records_csv,
    write_records_json,
    write_summary_csv,
)
from lspi_lqr.logger import setup_logger
from lspi_lqr.policy_iter import write_pi_trace_csv

# Create a default project logger
logger = setup_logger()

app = typer.Typer(help="Least-squares policy iteration experiments for LQR.", no_args_is_help=True)

ConfigOpt = Annotated[
    Path | None, typer.Option("--config", help="JSON experiment config file.", dir_okay=False)
]
PresetOpt = Annotated[Preset | None, typer.Option("--preset", help="Named experiment preset.")]
SeedOpt = Annotated[int | None, typer.Option("--seed", help="Root seed of all random streams.")]
TrialsOpt = Annotated[int | None, typer.Option("--trials", help="Number of independent trials.")]
OutOpt = Annotated[Path | None, typer.Option("--out", help="Records file to write.")]
FormatOpt = Annotated[OutputFormat | None, typer.Option("--format", help="Records file format.")]
JobsOpt = Annotated[int | None, typer.Option("--jobs", help="Trials run in parallel.")]
AlgorithmOpt = Annotated[
    list[Algorithm] | None,
    typer.Option("--algorithm", help="Algorithm to run; repeat the flag for several."),
]


def _resolve(
    preset: Preset | None,
    config: Path | None,
    seed: int | None,
    trials: int | None,
    out: Path | None,
    fmt: OutputFormat | None,
    jobs: int | None,
    algorithm: list[Algorithm] | None,
) -> ExperimentConfig:
    given: dict[str, Any] = {
        "seed": seed,
        "trials": trials,
        "output": None if out is None else str(out),
        "format": fmt,
        "jobs": jobs,
        "algorithms": algorithm or None,
    }
    # options left unset on the command line do not override the preset or file
    overrides = {k: v for k, v in given.items() if v is not None}
    try:
        return resolve_config(preset, config, overrides)
    except LqrError as err:
        _fail(err)


def _fail(err: Exception) -> NoReturn:
    typer.echo(f"error: {err}", err=True)
    raise typer.Exit(code=2)


def _output_paths(cfg: ExperimentConfig, default_stem: str) -> tuple[Path, Path, Path]:
    records = Path(cfg.output) if cfg.output else Path(f"{default_stem}.{cfg.format.value}")
    stem = records.with_suffix("")
    return records, Path(f"{stem}.summary.csv"), Path(f"{stem}.meta.json")


def _write_meta(metadata: dict[str, Any], path: Path) -> None:
    path.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_result(result: ExperimentResult, cfg: ExperimentConfig, default_stem: str) -> None:
    records_path, summary_path, meta_path = _output_paths(cfg, default_stem)
    records_path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.format is OutputFormat.JSON:
        write_records_json(result.records, records_path)
    else:
        write_records_csv(result.records, records_path)
    write_summary_csv(aggregate_percentiles(result.records), summary_path)
    _write_meta(result.metadata, meta_path)
    logger.info(f"wrote {len(result.records)} records to {records_path}")
    typer.echo(str(records_path))


@app.command()
def offline(
    config: ConfigOpt = None,
    preset: PresetOpt = None,
    seed: SeedOpt = None,
    trials: TrialsOpt = None,
    out: OutOpt = None,
    fmt: FormatOpt = None,
    jobs: JobsOpt = None,
    algorithm: AlgorithmOpt = None,
) -> None:
    """Non-adaptive comparison: relative cost error against the step budget."""
    cfg = _resolve(preset, config, seed, trials, out, fmt, jobs, algorithm)
    try:
        result = run_offline_experiment(cfg)
    except LqrError as err:
        _fail(err)
    _write_result(result, cfg, "offline")


@app.command()
def online(
    config: ConfigOpt = None,
    preset: PresetOpt = None,
    seed: SeedOpt = None,
    trials: TrialsOpt = None,
    out: OutOpt = None,
    fmt: FormatOpt = None,
    jobs: JobsOpt = None,
    algorithm: AlgorithmOpt = None,
) -> None:
    """Adaptive control: cumulative regret and relative cost error over time."""
    if preset is None and config is None:
        preset = Preset.ONLINE_PAPER
    cfg = _resolve(preset, config, seed, trials, out, fmt, jobs, algorithm)
    try:
        result = run_online_experiment(cfg)
    except LqrError as err:
        _fail(err)
    _write_result(result, cfg, "online")


@app.command("lstdq-sweep")
def lstdq_sweep(
    config: ConfigOpt = None,
    preset: PresetOpt = None,
    seed: SeedOpt = None,
    trials: TrialsOpt = None,
    out: OutOpt = None,
    fmt: FormatOpt = None,
) -> None:
    """LSTD-Q parameter error of the initial gain at each configured horizon."""
    cfg = _resolve(preset, config, seed, trials, out, fmt, None, None)
    try:
        result = run_lstdq_sweep(cfg)
    except LqrError as err:
        _fail(err)
    _write_result(result, cfg, "lstdq_sweep")


@app.command("pi-exact")
def pi_exact(
    config: ConfigOpt = None,
    preset: PresetOpt = None,
    out: OutOpt = None,
) -> None:
    """Exact policy iteration trace: one CSV row per iteration."""
    cfg = _resolve(preset, config, None, None, out, None, None, None)
    try:
        trace, metadata = run_pi_exact(cfg)
    except LqrError as err:
        _fail(err)
    path = Path(cfg.output) if cfg.output else Path("pi_exact.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pi_trace_csv(trace, path)
    _write_meta(metadata, Path(f"{path.with_suffix('')}.meta.json"))
    if trace.failed:
        logger.warning(f"exact policy iteration stopped: {trace.failure}")
    typer.echo(str(path))


@app.command()
def aggregate(
    records: Annotated[Path, typer.Argument(help="Records file written by a run.", exists=True)],
    out: OutOpt = None,
    quantiles: Annotated[
        str, typer.Option("--quantiles", help="Comma-separated quantiles in [0, 1].")
    ] = ",".join(str(q) for q in DEFAULT_QUANTILES),
) -> None:
    """Recompute the percentile summary of a saved records file."""
    try:
        qs = tuple(float(q) for q in quantiles.split(","))
        rows = (
            read_records_json(records)
            if records.suffix == ".json"
            else read_records_csv(records)
        )
        summary = aggregate_percentiles(rows, qs)
    except (LqrError, ValueError) as err:
        _fail(err)
    path = out if out is not None else Path(f"{records.with_suffix('')}.summary.csv")
    write_summary_csv(summary, path, qs)
    typer.echo(str(path))


if __name__ == "__main__":
    app()
