"""Metric records, their CSV/JSON files and nearest-rank percentile summaries."""

import csv
import enum
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

from lspi_lqr.errors import ConfigError
from lspi_lqr.logger import setup_logger

# Create a default project logger
logger = setup_logger()

RECORD_HEADER = ("algorithm", "trial", "step", "metric", "value")
DEFAULT_QUANTILES = (0.1, 0.5, 0.9)


class Metric(str, enum.Enum):
    """Recorded quantities."""

    REL_COST_ERR = "rel_cost_err"
    CUM_REGRET = "cum_regret"
    Q_ERR = "q_err"
    FAILURE = "failure"


@dataclass(frozen=True)
class MetricRecord:
    """One measurement of one trial."""

    algorithm: str
    trial: int
    step: int
    metric: str
    value: float


@dataclass(frozen=True)
class SummaryRow:
    """Quantiles of a metric across trials at one step."""

    algorithm: str
    metric: str
    step: int
    count: int
    values: tuple[float, ...]


def canonical_sort(records: Iterable[MetricRecord]) -> list[MetricRecord]:
    """Order records by algorithm, trial, step and metric."""
    return sorted(records, key=lambda r: (r.algorithm, r.trial, r.step, r.metric))


def write_records_csv(records: Iterable[MetricRecord], path: str | Path) -> Path:
    """Write records with the ``algorithm,trial,step,metric,value`` header."""
    out = Path(path)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_HEADER)
        for r in canonical_sort(records):
            writer.writerow([r.algorithm, r.trial, r.step, r.metric, repr(float(r.value))])
    return out


def write_records_json(records: Iterable[MetricRecord], path: str | Path) -> Path:
    """Write records as a JSON array of objects."""
    out = Path(path)
    # non-finite values are written as strings so the file stays strict JSON
    payload = [
        {**asdict(r), "value": r.value if math.isfinite(r.value) else repr(float(r.value))}
        for r in canonical_sort(records)
    ]
    out.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return out


def read_records_csv(path: str | Path) -> list[MetricRecord]:
    """Read a records CSV written by ``write_records_csv``."""
    src = Path(path)
    with src.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORD_HEADER:
            raise ConfigError(f"{src} does not start with the header {','.join(RECORD_HEADER)}")
        return [
            MetricRecord(row[0], int(row[1]), int(row[2]), row[3], float(row[4]))
            for row in reader
            if row
        ]


def read_records_json(path: str | Path) -> list[MetricRecord]:
    """Read a records JSON array written by ``write_records_json``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        MetricRecord(d["algorithm"], int(d["trial"]), int(d["step"]), d["metric"], float(d["value"]))
        for d in data
    ]


def nearest_rank(sorted_values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q * N)``-th smallest value, at least the first."""
    n = len(sorted_values)
    rank = min(max(math.ceil(q * n - 1e-9), 1), n)
    return sorted_values[rank - 1]


def aggregate_percentiles(
    records: Iterable[MetricRecord], quantiles: Sequence[float] = DEFAULT_QUANTILES
) -> list[SummaryRow]:
    """Per ``(algorithm, metric, step)``, the requested nearest-rank quantiles over trials.

    NaN values are ignored; a group left without values is omitted with a warning.
    """
    for q in quantiles:
        if not 0.0 <= q <= 1.0:
            raise ConfigError(f"quantiles: {q} is not in [0, 1]")
    groups: dict[tuple[str, str, int], list[float]] = {}
    for r in records:
        values = groups.setdefault((r.algorithm, r.metric, r.step), [])
        if not math.isnan(r.value):
            values.append(r.value)

    rows = []
    for (algorithm, metric, step), values in sorted(groups.items()):
        if not values:
            logger.warning(f"no values for {algorithm}/{metric} at step {step}, omitted from summary")
            continue
        ordered = sorted(values)
        rows.append(
            SummaryRow(
                algorithm=algorithm,
                metric=metric,
                step=step,
                count=len(ordered),
                values=tuple(nearest_rank(ordered, q) for q in quantiles),
            )
        )
    return rows


def _quantile_label(q: float) -> str:
    return f"p{round(q * 100):g}" if abs(q * 100 - round(q * 100)) < 1e-9 else f"q{q!r}"


def write_summary_csv(
    rows: Iterable[SummaryRow], path: str | Path, quantiles: Sequence[float] = DEFAULT_QUANTILES
) -> Path:
    """Write the quantile table: ``algorithm,metric,step,count,p10,p50,p90``."""
    out = Path(path)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "metric", "step", "count", *map(_quantile_label, quantiles)])
        for row in rows:
            writer.writerow(
                [row.algorithm, row.metric, row.step, row.count, *(repr(float(v)) for v in row.values)]
            )
    return out
