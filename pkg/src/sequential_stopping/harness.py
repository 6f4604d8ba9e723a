"""Evaluate the reliability and complexity of a stopping rule over a grid of (epsilon, delta).

For each grid point, many independent runs are stopped and resampled. A run
succeeds when :math:`|\\mu^\\star(\\tau) - \\mu| \\leq \\varepsilon`, and the
empirical success probability :math:`p` gives the reliability
:math:`R = p/(1-\\delta)`. The complexity is the average of
:math:`\\tau^\\ell - (\\tau-1)^\\ell`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pystow
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from .models import CellReport, GridSummary, MetricSummary
from .process import ModelFactory, parse_model
from .schedule import BatchSchedule, parse_schedule
from .stats import RngStream
from .stopping import StoppingConfig, run_stopping
from .version import get_version

__all__ = [
    "EvalGrid",
    "GridReport",
    "ReportMetadata",
    "RunRecord",
    "build_grid",
    "evaluate",
    "format_summary_table",
    "parse_range",
    "reliability_floor",
    "resolve_threads",
    "summarize",
    "write_csv",
    "write_summary_json",
]

logger = logging.getLogger(__name__)

#: The number of runs handed to a worker at once
RUNS_PER_TASK = 50

#: The columns of the grid CSV
CSV_HEADER = ("eps", "delta", "p", "R", "CM", "mean_tau", "capped")


class EvalGrid(BaseModel):
    """A logarithmically spaced grid of precisions and error probabilities."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epsilon_range: tuple[float, float] = (1e-3, 1e-1)
    delta_range: tuple[float, float] = (1e-3, 1e-1)
    points: int = Field(10, ge=2, description="The number of points per axis")

    @model_validator(mode="after")
    def _check_ranges(self) -> EvalGrid:
        a1, a2 = self.epsilon_range
        if not 0 < a1 < a2 or not math.isfinite(a2):
            raise ValueError(f"epsilon range must satisfy 0 < a1 < a2: {self.epsilon_range}")
        b1, b2 = self.delta_range
        if not 0 < b1 < b2 < 1:
            raise ValueError(f"delta range must satisfy 0 < b1 < b2 < 1: {self.delta_range}")
        return self

    @staticmethod
    def _axis(low: float, high: float, points: int) -> tuple[float, ...]:
        values = np.geomspace(low, high, points)
        values[0], values[-1] = low, high
        return tuple(values.tolist())

    @property
    def epsilons(self) -> tuple[float, ...]:
        """Get the precision axis, from the smallest to the largest."""
        return self._axis(*self.epsilon_range, self.points)

    @property
    def deltas(self) -> tuple[float, ...]:
        """Get the error probability axis, from the smallest to the largest."""
        return self._axis(*self.delta_range, self.points)

    def cells(self) -> list[tuple[float, float]]:
        """Get the grid points, ordered by precision first."""
        return [(epsilon, delta) for epsilon in self.epsilons for delta in self.deltas]


def build_grid(a1: float, a2: float, b1: float, b2: float, points: int = 10) -> EvalGrid:
    """Build a logarithmically spaced grid.

    :param a1: The smallest precision
    :param a2: The largest precision
    :param b1: The smallest error probability
    :param b2: The largest error probability
    :param points: The number of points per axis
    :return: The grid, whose axes are geometric sequences including both endpoints
    :raises ValueError: If the ranges are not ordered or out of bounds
    """
    return EvalGrid(epsilon_range=(a1, a2), delta_range=(b1, b2), points=points)


def parse_range(spec: str) -> tuple[float, float]:
    """Parse a range written as ``low:high``."""
    low, sep, high = spec.partition(":")
    if not sep:
        raise ValueError(f"ranges are written as low:high, got: {spec}")
    try:
        return float(low), float(high)
    except ValueError:
        raise ValueError(f"invalid range: {spec}") from None


def reliability_floor(delta: float, n: int) -> float:
    """Get the reliability three binomial standard errors below one.

    :param delta: The error probability
    :param n: The number of runs
    :return: 1 - 3 sqrt(delta (1 - delta) / n) / (1 - delta)
    """
    return 1.0 - 3.0 * math.sqrt(delta * (1.0 - delta) / n) / (1.0 - delta)


def resolve_threads(threads: int | None = None) -> int:
    """Get the number of workers, configurable via :func:`pystow.get_config`.

    An explicit value is passed through. Otherwise, reads
    ``SEQUENTIAL_STOPPING_THREADS`` or the ``threads`` key of the ``sequential_stopping``
    configuration, defaulting to the machine's parallelism.
    """
    rv = pystow.get_config(
        "sequential_stopping",
        "threads",
        passthrough=threads,
        dtype=int,
        default=os.cpu_count() or 1,
    )
    if rv < 1:
        raise ValueError(f"need at least one thread: {rv}")
    return rv


class RunRecord(NamedTuple):
    """The part of a stopped run that enters the grid report."""

    tau: int
    success: bool
    hit_cap: bool
    total_samples: int
    abs_error: float


class ReportMetadata(BaseModel):
    """Everything needed to reproduce a grid report."""

    model: str
    schedule: str
    config: StoppingConfig = Field(
        ..., description="The rule, with the precision and error probability of the first cell"
    )
    grid: EvalGrid
    runs: int
    ell: int
    base_seed: int
    version: str = Field(default_factory=get_version)


class GridReport(BaseModel):
    """Reliability and complexity over a grid."""

    metadata: ReportMetadata
    cells: list[CellReport]


class _Task(NamedTuple):
    factory: ModelFactory
    schedule: BatchSchedule
    config: StoppingConfig
    true_mean: float
    cell: int
    start: int
    stop: int
    base_seed: int


def _run_task(task: _Task) -> list[RunRecord]:
    rv = []
    for run in range(task.start, task.stop):
        stream = RngStream(task.base_seed, cell=task.cell, run=run)
        outcome = run_stopping(task.factory(), task.schedule, task.config, stream)
        abs_error = abs(outcome.mu_star - task.true_mean)
        rv.append(
            RunRecord(
                tau=outcome.tau,
                success=not outcome.hit_cap and abs_error <= task.config.epsilon,
                hit_cap=outcome.hit_cap,
                total_samples=outcome.total_samples,
                abs_error=abs_error,
            )
        )
    return rv


def _aggregate(
    epsilon: float, delta: float, records: Sequence[RunRecord], ell: int
) -> CellReport:
    n = len(records)
    successes = sum(record.success for record in records)
    # exact integer sum
    complexity = sum(record.tau**ell - (record.tau - 1) ** ell for record in records)
    p = successes / n
    return CellReport(
        epsilon=epsilon,
        delta=delta,
        runs=n,
        successes=successes,
        p=p,
        reliability=p / (1.0 - delta),
        complexity=complexity / n,
        mean_tau=sum(record.tau for record in records) / n,
        capped=sum(record.hit_cap for record in records),
        mean_total_samples=sum(record.total_samples for record in records) / n,
        mean_abs_error=math.fsum(record.abs_error for record in records) / n,
    )


def evaluate(
    model: ModelFactory | str,
    schedule: BatchSchedule | str,
    grid: EvalGrid,
    *,
    runs: int = 5000,
    ell: int = 5,
    base_seed: int = 0,
    config: StoppingConfig | None = None,
    threads: int | None = None,
    progress: bool = True,
) -> GridReport:
    """Evaluate a stopping rule over a grid.

    :param model: The model factory or its string form
    :param schedule: The batch schedule or its string form
    :param grid: The grid of precisions and error probabilities
    :param runs: The number of independent runs per grid point
    :param ell: The exponent of the complexity
    :param base_seed: The base seed. Run j of cell i uses the stream keyed by (i, j),
        so the report does not depend on the number of workers.
    :param config: The rule's variance kind, inflation, and caps. Its precision and
        error probability are replaced by each grid point's.
    :param threads: The number of worker processes, see :func:`resolve_threads`.
        With a single thread, runs execute in this process.
    :param progress: Whether to show a progress bar
    :return: The report, with cells ordered like :meth:`EvalGrid.cells`
    :raises ValueError: If the number of runs or the complexity exponent is smaller than one
    """
    if runs < 1:
        raise ValueError(f"need at least one run per cell: {runs}")
    if ell < 1:
        raise ValueError(f"complexity exponent must be positive: {ell}")
    factory = parse_model(model)
    schedule = parse_schedule(schedule)
    if config is None:
        config = StoppingConfig(epsilon=grid.epsilon_range[0], delta=grid.delta_range[0])
    threads = resolve_threads(threads)
    true_mean = factory.true_mean()

    cells = grid.cells()
    cell_configs = [
        config.model_copy(update={"epsilon": epsilon, "delta": delta}) for epsilon, delta in cells
    ]
    tasks = [
        _Task(
            factory=factory,
            schedule=schedule,
            config=cell_config,
            true_mean=true_mean,
            cell=cell,
            start=start,
            stop=min(start + RUNS_PER_TASK, runs),
            base_seed=base_seed,
        )
        for cell, cell_config in enumerate(cell_configs)
        for start in range(0, runs, RUNS_PER_TASK)
    ]
    logger.info("running %d runs in each of %d cells with %d threads", runs, len(cells), threads)

    results: dict[tuple[int, int], list[RunRecord]] = {}
    if threads == 1:
        for task in tqdm(tasks, desc="Evaluating", unit="task", disable=not progress):
            results[task.cell, task.start] = _run_task(task)
    else:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(_run_task, task): task for task in tasks}
            for future in tqdm(
                as_completed(futures),
                total=len(futures),
                desc="Evaluating",
                unit="task",
                disable=not progress,
            ):
                task = futures[future]
                results[task.cell, task.start] = future.result()

    reports = []
    for cell, (epsilon, delta) in enumerate(cells):
        records = [
            record
            for start in range(0, runs, RUNS_PER_TASK)
            for record in results[cell, start]
        ]
        reports.append(_aggregate(epsilon, delta, records, ell))

    metadata = ReportMetadata(
        model=factory.spec,
        schedule=schedule.to_string(),
        config=cell_configs[0],
        grid=grid,
        runs=runs,
        ell=ell,
        base_seed=base_seed,
    )
    return GridReport(metadata=metadata, cells=reports)


def _metric_summary(values: Iterable[float]) -> MetricSummary:
    arr = np.fromiter(values, dtype=np.float64)
    return MetricSummary(mean=float(arr.mean()), min=float(arr.min()), max=float(arr.max()))


def summarize(report: GridReport) -> GridSummary:
    """Get the mean, minimum, and maximum of reliability and complexity over the grid."""
    return GridSummary(
        reliability=_metric_summary(cell.reliability for cell in report.cells),
        complexity=_metric_summary(cell.complexity for cell in report.cells),
    )


def _format_float(value: float) -> str:
    return format(value, ".17g")


def write_csv(report: GridReport, path: str | Path) -> None:
    """Write one row per grid point, with floats printed losslessly."""
    with open(path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for cell in report.cells:
            writer.writerow(
                (
                    _format_float(cell.epsilon),
                    _format_float(cell.delta),
                    _format_float(cell.p),
                    _format_float(cell.reliability),
                    _format_float(cell.complexity),
                    _format_float(cell.mean_tau),
                    str(cell.capped),
                )
            )


def write_summary_json(report: GridReport, path: str | Path) -> None:
    """Write the summary blocks and the metadata of a report as JSON."""
    summary = summarize(report)
    document = {
        "R": summary.reliability.model_dump(),
        "CM": summary.complexity.model_dump(),
        "capped": sum(cell.capped for cell in report.cells),
        "metadata": report.metadata.model_dump(mode="json"),
    }
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


def format_summary_table(summary: GridSummary) -> str:
    """Format the summary as a table of mean, minimum, and maximum per metric."""
    rows = [("Metric", "Mean", "Min", "Max")]
    for name, metric in (("R", summary.reliability), ("CM", summary.complexity)):
        rows.append((name, f"{metric.mean:.4f}", f"{metric.min:.4f}", f"{metric.max:.4f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for row in rows:
        label, *values = row
        cells = [label.ljust(widths[0])]
        cells.extend(value.rjust(width) for value, width in zip(values, widths[1:], strict=True))
        lines.append("  ".join(cells))
    return "\n".join(lines)
