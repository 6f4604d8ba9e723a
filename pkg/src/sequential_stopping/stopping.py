"""The sequential stopping engine.

A run generates batch after batch of the original path and stops at the first
batch :math:`\\tau` with

.. math::

    2 \\left(1 - \\Phi\\left(\\frac{\\varepsilon \\sqrt{|M(t)|}}{v(t) + a(t)}\\right)\\right)
    \\leq \\delta

where :math:`v(t)` is the square root of the configured batch variance and
:math:`a(t)` is an inflation that vanishes as :math:`t` grows. The output is
not the mean of batch :math:`\\tau` itself, but the mean :math:`\\mu^\\star(\\tau)`
of a fresh batch of the same size, resampled from the state at the start of
batch :math:`\\tau` with independent randomness.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .models import BatchStatistics, InflationKind, StoppingOutcome, VarianceKind
from .process import CHUNK_SIZE, ModelState, ProcessModel, branch_for_resample
from .schedule import BatchSchedule
from .stats import BatchAccumulator, RngStream, normal_cdf, normal_quantile

__all__ = [
    "StoppingConfig",
    "VarianceUnavailableError",
    "batch_criterion",
    "criterion_probability",
    "iter_batches",
    "predicted_stopping_batch",
    "run_stopping",
    "should_stop",
]

logger = logging.getLogger(__name__)


class VarianceUnavailableError(ValueError):
    """Raised when a model can not provide the configured batch variance."""


class StoppingConfig(BaseModel):
    """Configuration of a stopping rule."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epsilon: float = Field(..., gt=0, allow_inf_nan=False, description="The precision")
    delta: float = Field(..., gt=0, lt=1, description="The error probability")
    variance: VarianceKind = "empirical"
    inflation: InflationKind = "inv_t"
    inflation_table: tuple[float, ...] | None = Field(
        None, description="The values a(1), a(2), ... when the inflation is a table"
    )
    t_max: int = Field(64, ge=1, description="The hard cap on the number of batches")
    min_batch: int = Field(1, ge=1, description="The first batch that may stop")

    @model_validator(mode="after")
    def _check_inflation_table(self) -> StoppingConfig:
        if self.inflation != "table":
            if self.inflation_table is not None:
                raise ValueError("an inflation table is only used with inflation=table")
            return self
        if not self.inflation_table:
            raise ValueError("inflation=table needs a non-empty inflation table")
        previous = math.inf
        for value in self.inflation_table:
            if not (0 < value <= previous) or not math.isfinite(value):
                raise ValueError(
                    f"inflation table must be positive and nonincreasing: {self.inflation_table}"
                )
            previous = value
        return self

    def inflation_at(self, t: int) -> float:
        """Get the inflation a(t).

        The last entry of an inflation table is held beyond the table's length.
        """
        match self.inflation:
            case "inv_t":
                return 1.0 / t
            case "none":
                return 0.0
            case "table":
                table = self.inflation_table or ()
                return table[min(t, len(table)) - 1]
            case _:
                raise ValueError(f"invalid inflation: {self.inflation}")


def criterion_probability(epsilon: float, batch_size: float, v: float, a_t: float) -> float:
    """Evaluate the stopping criterion 2(1 - Phi(epsilon sqrt(|M(t)|) / (v + a(t)))).

    :param epsilon: The precision
    :param batch_size: The batch cardinality |M(t)|
    :param v: The batch standard deviation v(t)
    :param a_t: The inflation a(t)
    :return: A probability in (0, 1], one for an infinite deviation
    :raises ValueError: If an argument is out of range or v + a(t) is zero
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive: {epsilon}")
    if not batch_size >= 1:
        raise ValueError(f"batch size must be at least one: {batch_size}")
    if not (v >= 0 and a_t >= 0):
        raise ValueError(f"deviation and inflation must be non-negative: v={v}, a={a_t}")
    scale = v + a_t
    if scale == 0:
        raise ValueError("the criterion is undefined for a zero deviation without inflation")
    if math.isinf(scale):
        return 1.0
    # 2(1 - Phi(x)) = 2 Phi(-x) keeps precision in the upper tail
    return 2.0 * normal_cdf(-epsilon * math.sqrt(batch_size) / scale)


def batch_criterion(config: StoppingConfig, stats: BatchStatistics) -> float | None:
    """Evaluate the criterion for a batch with the configured variance.

    A batch whose deviation and inflation are both zero has a criterion of zero.

    :return: The criterion, or none if the batch lacks the configured variance
    """
    variance = stats.variance_of(config.variance)
    if variance is None:
        return None
    v = math.sqrt(max(variance, 0.0))
    a_t = config.inflation_at(stats.t)
    if v + a_t == 0:
        return 0.0
    return criterion_probability(config.epsilon, stats.batch_size, v, a_t)


def should_stop(config: StoppingConfig, t: int, stats: BatchStatistics) -> bool:
    """Decide whether the run stops at batch t.

    The criterion is inclusive: the run stops when it is at most delta. A
    single-sample batch has no empirical variance and never stops with the
    empirical variance kind.

    :raises VarianceUnavailableError: If the batch lacks the configured variance
    """
    variance = stats.variance_of(config.variance)
    if variance is None:
        if config.variance == "empirical" and stats.batch_size < 2:
            return False
        raise VarianceUnavailableError(f"batch {t} has no {config.variance} variance")
    if t < config.min_batch:
        return False
    criterion = batch_criterion(config, stats)
    return criterion is not None and criterion <= config.delta


def _check_variance_available(
    model: ProcessModel, schedule: BatchSchedule, config: StoppingConfig
) -> None:
    if config.variance == "conditional" and not model.has_conditional_variance:
        raise VarianceUnavailableError(f"{model!r} does not emit conditional variances")
    if (
        config.variance == "theoretical"
        and model.theoretical_batch_variance(schedule, 1) is None
    ):
        raise VarianceUnavailableError(f"{model!r} has no theoretical batch variance")


def iter_batches(
    model: ProcessModel,
    schedule: BatchSchedule,
    config: StoppingConfig,
    stream: RngStream,
    *,
    t_max: int | None = None,
) -> Iterator[tuple[BatchStatistics, ModelState]]:
    """Generate the batches of the original path.

    Before each batch, the model state is checkpointed; after it, the model's
    per-batch update runs. The checkpoint is yielded with the batch, so a run
    stopping at this batch can resample it.

    :param model: The model, which is advanced in place
    :param schedule: The batch schedule
    :param config: The stopping configuration, used for the criterion column
    :param stream: The primary stream
    :param t_max: The number of batches. Defaults to the configuration's cap,
        shortened to the last batch of the schedule.
    :yields: Pairs of the batch statistics and the checkpoint at the batch start
    :raises ValueError: If an explicit number of batches exceeds the schedule
    """
    if t_max is None:
        t_max = min(config.t_max, schedule.max_batch)
    elif t_max > schedule.max_batch:
        raise ValueError(f"t_max={t_max} exceeds the last batch of the schedule {schedule}")
    for t in range(1, t_max + 1):
        state = model.checkpoint()
        parameter = model.parameter()
        size = schedule.batch_size(t)
        accumulator = BatchAccumulator()
        remaining = size
        while remaining > 0:
            n = min(remaining, CHUNK_SIZE)
            x, cond_var = model.sample_batch(stream, n)
            accumulator.update(x, cond_var)
            remaining -= n
        summary = accumulator.finalize(require_variance=False)
        stats = BatchStatistics(
            t=t,
            batch_size=size,
            mean=summary.mean,
            variance_empirical=summary.variance_unbiased,
            variance_biased=summary.variance_biased,
            variance_conditional=summary.conditional_variance,
            variance_theoretical=model.theoretical_batch_variance(schedule, t),
            parameter=parameter,
            inflation=config.inflation_at(t),
        )
        stats = stats.model_copy(update={"criterion": batch_criterion(config, stats)})
        model.on_batch_end(summary)
        yield stats, state


def run_stopping(
    model: ProcessModel,
    schedule: BatchSchedule,
    config: StoppingConfig,
    stream: RngStream,
    branch_stream: RngStream | None = None,
) -> StoppingOutcome:
    """Run the stopping rule and resample the stopping batch.

    If no batch up to the cap satisfies the criterion, the last batch is
    resampled anyway and the outcome is flagged with ``hit_cap``.

    :param model: A fresh model, advanced in place
    :param schedule: The batch schedule
    :param config: The stopping configuration
    :param stream: The primary stream
    :param branch_stream: The stream for the resampled batch, defaults to the
        branch of the primary stream
    :return: The outcome
    :raises VarianceUnavailableError: If the model can not provide the configured variance
    :raises ValueError: If the primary and branch streams coincide
    """
    _check_variance_available(model, schedule, config)
    if branch_stream is None:
        branch_stream = stream.branch_stream()
    if branch_stream.key == stream.key:
        raise ValueError(f"primary and branch streams must differ: {stream.key}")

    hit_cap = True
    last: tuple[BatchStatistics, ModelState] | None = None
    for stats, state in iter_batches(model, schedule, config, stream):
        last = stats, state
        if should_stop(config, stats.t, stats):
            hit_cap = False
            logger.debug("stopped at batch %d with criterion %s", stats.t, stats.criterion)
            break
    if last is None:  # pragma: no cover
        raise RuntimeError("no batch was generated")
    stats, state = last
    if hit_cap:
        logger.info("%r hit the cap of %d batches without stopping", model, stats.t)

    mu_star = branch_for_resample(model, state, branch_stream, stats.batch_size)
    return StoppingOutcome(
        tau=stats.t,
        mu_star=mu_star,
        mu_at_stop=stats.mean,
        v_at_stop=stats.variance_of(config.variance),
        total_samples=schedule.batch_bound(stats.t) + stats.batch_size,
        criterion_value_at_stop=stats.criterion,
        hit_cap=hit_cap,
    )


def predicted_stopping_batch(epsilon: float, delta: float, c: float, q: float) -> float:
    """Get the asymptotic stopping batch of the theoretical rule.

    When :math:`v_0^2(t)/|M(t)| \\approx c\\, t^{-2q}`, the theoretical rule stops
    around :math:`t = (\\sqrt{c}\\, \\Phi^{-1}(1 - \\delta/2) / \\varepsilon)^{1/q}`.
    For independent samples of variance :math:`\\sigma^2` under the schedule
    :math:`m(t) = t^5`, :math:`|M(t)| \\approx 5 t^4`, so :math:`c = \\sigma^2/5`
    and :math:`q = 2`.
    """
    if not (epsilon > 0 and c > 0 and q > 0):
        raise ValueError(f"epsilon, c, and q must be positive: {epsilon}, {c}, {q}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1): {delta}")
    return (math.sqrt(c) * normal_quantile(1.0 - delta / 2.0) / epsilon) ** (1.0 / q)
