"""Command line interface for :mod:`sequential_stopping`.

Every command reads its configuration from an optional JSON file given with
``--config``, overridden by the flags given on the command line. Validation
errors exit with status 1 and failed verification checks with status 2.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Literal, TypeVar

import click
import pystow
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .harness import (
    EvalGrid,
    evaluate,
    format_summary_table,
    parse_range,
    summarize,
    write_csv,
    write_summary_json,
)
from .models import BatchStatistics, VarianceKind
from .process import parse_model
from .schedule import BatchSchedule, parse_schedule
from .stats import RngStream
from .stopping import StoppingConfig, iter_batches, run_stopping
from .verify import DEFAULT_DRAWS, run_checks

__all__ = [
    "CliConfig",
    "main",
]

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable[..., Any])

#: The columns of the trace CSV
TRACE_HEADER = (
    "t",
    "batch_size",
    "mu",
    "v0sq",
    "v1sq",
    "v2sq",
    "v2sq_biased",
    "theta",
    "criterion",
)


def _default_seed() -> int:
    return pystow.get_config("sequential_stopping", "seed", dtype=int, default=0)


class CliConfig(BaseModel):
    """The effective configuration of a command."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["run", "trace", "evaluate", "verify"] | None = None
    model: str = "arch1"
    schedule: str = "poly:5"
    epsilon: float = Field(0.05, gt=0, allow_inf_nan=False)
    delta: float = Field(0.05, gt=0, lt=1)
    variance: VarianceKind = "empirical"
    inflation: Literal["inv_t", "none"] = "inv_t"
    seed: int = Field(default_factory=_default_seed, ge=0, lt=2**64)
    runs: int = Field(5000, ge=1)
    ell: int = Field(5, ge=1)
    grid_eps: str = "0.001:0.1"
    grid_delta: str = "0.001:0.1"
    grid_points: int = Field(10, ge=2)
    t_max: int = Field(64, ge=1)
    batches: int = Field(8, ge=1)
    out: str | None = None
    format: Literal["csv", "json"] = "csv"
    threads: int | None = Field(None, ge=1)
    checks: tuple[str, ...] = ()
    draws: int = Field(DEFAULT_DRAWS, ge=1)

    @model_validator(mode="after")
    def _check_specs(self) -> CliConfig:
        parse_model(self.model)
        self.get_schedule()
        self.get_stopping_config()
        self.get_grid()
        return self

    def get_schedule(self) -> BatchSchedule:
        """Get the batch schedule."""
        return parse_schedule(self.schedule)

    def get_stopping_config(self) -> StoppingConfig:
        """Get the stopping rule."""
        return StoppingConfig(
            epsilon=self.epsilon,
            delta=self.delta,
            variance=self.variance,
            inflation=self.inflation,
            t_max=self.t_max,
        )

    def get_grid(self) -> EvalGrid:
        """Get the evaluation grid."""
        return EvalGrid(
            epsilon_range=parse_range(self.grid_eps),
            delta_range=parse_range(self.grid_delta),
            points=self.grid_points,
        )


@contextmanager
def _exit_on_value_error() -> Iterator[None]:
    try:
        yield
    except (ValueError, OSError) as e:
        click.secho(f"error: {e}", err=True, fg="red")
        raise click.exceptions.Exit(1) from e


def _load_config(command: str, config_path: Path | None, **flags: Any) -> CliConfig:
    data: dict[str, Any] = {}
    if config_path is not None:
        data.update(json.loads(config_path.read_text()))
    data.update({key: value for key, value in flags.items() if value is not None})
    data["command"] = command
    return CliConfig.model_validate(data)


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="A JSON file with configuration. Flags given on the command line take precedence.",
)
model_option = click.option(
    "--model",
    help="The model, like iid:normal:0:1, arch1:0.03:0.3:6, cv:usq_half, or cv:poly:0,0,0.5:2",
)
schedule_option = click.option(
    "--schedule", help="The batch schedule, like poly:5 or explicit:1,32,243"
)
epsilon_option = click.option("--epsilon", help="The precision")
delta_option = click.option("--delta", help="The error probability")
variance_option = click.option("--variance", help="One of empirical, conditional, or theoretical")
inflation_option = click.option("--inflation", help="Either inv_t for a(t) = 1/t or none")
seed_option = click.option(
    "--seed", help="The base seed. Defaults to SEQUENTIAL_STOPPING_SEED or 0"
)
t_max_option = click.option("--t-max", "t_max", help="The cap on the number of batches")
out_option = click.option("--out", help="The output path")
progress_option = click.option("--progress/--no-progress", default=True, show_default=True)


def _rule_options(f: F) -> F:
    for option in reversed(
        [
            config_option,
            model_option,
            schedule_option,
            variance_option,
            inflation_option,
            seed_option,
        ]
    ):
        f = option(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True, help="Log more, repeat for debug output")
def main(verbose: int) -> None:
    """Run sequential stopping rules for Monte Carlo estimation."""
    if verbose:
        logging.basicConfig(
            level=logging.DEBUG if verbose > 1 else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )


@main.command()
@_rule_options
@t_max_option
@epsilon_option
@delta_option
def run(config_path: Path | None, **flags: Any) -> None:
    """Run the stopping rule once and print the outcome as JSON."""
    with _exit_on_value_error():
        config = _load_config("run", config_path, **flags)
        model = parse_model(config.model)()
        outcome = run_stopping(
            model, config.get_schedule(), config.get_stopping_config(), RngStream(config.seed)
        )
    click.echo(json.dumps(outcome.to_record()))


def _format_optional(value: float | None) -> str:
    return "" if value is None else format(value, ".17g")


def _trace_row(stats: BatchStatistics) -> tuple[str, ...]:
    return (
        str(stats.t),
        str(stats.batch_size),
        format(stats.mean, ".17g"),
        _format_optional(stats.variance_theoretical),
        _format_optional(stats.variance_conditional),
        _format_optional(stats.variance_empirical),
        format(stats.variance_biased, ".17g"),
        "" if stats.parameter is None else ";".join(format(p, ".17g") for p in stats.parameter),
        _format_optional(stats.criterion),
    )


@main.command()
@_rule_options
@epsilon_option
@delta_option
@click.option("--batches", help="The number of batches to trace, which replaces the cap")
@click.option("--format", "format", help="Either csv or json")
@out_option
def trace(config_path: Path | None, **flags: Any) -> None:
    """Print the statistics of every batch of a single path."""
    with _exit_on_value_error():
        config = _load_config("trace", config_path, **flags)
        model = parse_model(config.model)()
        rows = [
            stats
            for stats, _ in iter_batches(
                model,
                config.get_schedule(),
                config.get_stopping_config(),
                RngStream(config.seed),
                t_max=config.batches,
            )
        ]
        if config.format == "json":
            text = json.dumps([stats.model_dump(mode="json") for stats in rows], indent=2) + "\n"
        else:
            buffer = io.StringIO()
            writer = csv.writer(buffer, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            writer.writerows(_trace_row(stats) for stats in rows)
            text = buffer.getvalue()
        if config.out is None:
            click.echo(text, nl=False)
        else:
            Path(config.out).write_text(text)


@main.command(name="evaluate")
@_rule_options
@t_max_option
@click.option("--runs", help="The number of runs per grid point")
@click.option("--ell", help="The exponent of the complexity")
@click.option("--grid-eps", "grid_eps", help="The precision range, like 0.001:0.1")
@click.option("--grid-delta", "grid_delta", help="The error probability range, like 0.001:0.1")
@click.option("--grid-points", "grid_points", help="The number of points per axis")
@click.option("--threads", help="The number of worker processes")
@out_option
@progress_option
def evaluate_command(config_path: Path | None, progress: bool, **flags: Any) -> None:
    """Evaluate reliability and complexity over a grid of precisions and error probabilities.

    Writes grid.csv, summary.json, and config.json into the output directory.
    """
    with _exit_on_value_error():
        config = _load_config("evaluate", config_path, **flags)
        report = evaluate(
            config.model,
            config.get_schedule(),
            config.get_grid(),
            runs=config.runs,
            ell=config.ell,
            base_seed=config.seed,
            config=config.get_stopping_config(),
            threads=config.threads,
            progress=progress,
        )
        directory = (
            Path(config.out) if config.out else pystow.join("sequential_stopping", "evaluations")
        )
        directory.mkdir(parents=True, exist_ok=True)
        write_csv(report, directory.joinpath("grid.csv"))
        write_summary_json(report, directory.joinpath("summary.json"))
        directory.joinpath("config.json").write_text(
            config.model_dump_json(indent=2, exclude={"threads", "out"}) + "\n"
        )
    logger.info("wrote evaluation to %s", directory)
    click.echo(format_summary_table(summarize(report)))


@main.command()
@config_option
@click.option("--check", "checks", multiple=True, help="A check to run, defaults to all")
@click.option("--draws", help="The number of draws for the moment checks")
@seed_option
@progress_option
def verify(config_path: Path | None, progress: bool, checks: tuple[str, ...], **flags: Any) -> None:
    """Run the numerical verification checks."""
    with _exit_on_value_error():
        config = _load_config("verify", config_path, checks=checks or None, **flags)
        results = run_checks(
            config.checks or None, draws=config.draws, seed=config.seed, progress=progress
        )
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        click.echo(
            f"{status} {result.name}: measured={result.measured:.10g} "
            f"expected={result.expected:.10g} {result.detail}".rstrip()
        )
    if not all(result.passed for result in results):
        raise click.exceptions.Exit(2)


if __name__ == "__main__":
    main()
