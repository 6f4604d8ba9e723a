"""Numerical checks of the statistical kernel and the models against known values.

Each check is a function of the number of draws and a seed that returns a
:class:`CheckResult` with the measured and the expected value.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable

import numpy as np
from scipy.integrate import quad
from tqdm import tqdm

from .models import CheckResult
from .process import USQ_HALF, Arch1Model, ControlVariateModel, IidModel
from .schedule import DEFAULT_SCHEDULE
from .stats import RngStream, normal_cdf, normal_quantile, sample_scaled_t
from .stopping import StoppingConfig, iter_batches, predicted_stopping_batch, run_stopping

__all__ = [
    "CHECKS",
    "DEFAULT_DRAWS",
    "check_arch_batch_variance",
    "check_arch_moments",
    "check_arch_stability",
    "check_cv_limits",
    "check_cv_optimal_parameter",
    "check_cv_variance_identity",
    "check_normal_cdf",
    "check_normal_quantile",
    "check_scaled_t_moments",
    "check_stopping_scaling",
    "check_unbiasedness",
    "run_checks",
]

logger = logging.getLogger(__name__)

#: The default number of draws for the moment checks
DEFAULT_DRAWS = 1_000_000

#: The known value of the 97.5% standard normal quantile
Z_975 = 1.9599639845400545

Check = Callable[[int, int], CheckResult]


def check_normal_cdf(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Compare the normal distribution function to an independent error function."""
    x = np.linspace(-8.0, 8.0, 100_001)
    values = normal_cdf(x)
    oracle = np.array([0.5 * math.erfc(-xi / math.sqrt(2.0)) for xi in x.tolist()])
    error = float(np.max(np.abs(values - oracle)))
    monotone = bool(np.all(np.diff(values) >= 0))
    centered = normal_cdf(0.0) == 0.5
    return CheckResult(
        name="normal_cdf",
        passed=error <= 1e-12 and monotone and centered,
        measured=error,
        expected=0.0,
        detail=f"max error on [-8, 8], monotone={monotone}, Phi(0)=0.5: {centered}",
    )


def check_normal_quantile(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check the quantile function's round trip and its value at 0.975."""
    x = np.linspace(-6.0, 6.0, 10_001)
    round_trip = float(np.max(np.abs(normal_quantile(normal_cdf(x)) - x)))
    value = normal_quantile(0.975)
    return CheckResult(
        name="normal_quantile",
        passed=round_trip <= 1e-6 and abs(value - Z_975) <= 1e-9,
        measured=value,
        expected=Z_975,
        detail=f"max round trip error on [-6, 6]: {round_trip:.3g}",
    )


def check_scaled_t_moments(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check the second and fourth moments of unit-variance t draws with six degrees of freedom."""
    v = sample_scaled_t(RngStream(seed, purpose="verify", cell=1), 6, draws)
    mean, second, fourth = float(v.mean()), float(np.mean(v**2)), float(np.mean(v**4))
    return CheckResult(
        name="scaled_t_moments",
        passed=abs(mean) <= 0.005 and 0.99 <= second <= 1.01 and 5.1 <= fourth <= 6.9,
        measured=fourth,
        expected=6.0,
        detail=f"mean={mean:.4g}, second moment={second:.4g}",
    )


def check_arch_stability(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check that the default ARCH(1) parameters have a bounded fourth moment."""
    ratio = Arch1Model().stability_ratio()
    return CheckResult(
        name="arch_stability",
        passed=ratio < 1.0,
        measured=ratio,
        expected=0.0054,
        detail="3 alpha^2 (n-2)/(n-4) must be below one",
    )


def check_arch_moments(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check the stationary variance, fourth moment, and mean of the default ARCH(1) model."""
    model = Arch1Model()
    stream = RngStream(seed, purpose="verify", cell=2)
    model.sample_batch(stream, 1_000)
    x, _ = model.sample_batch(stream, draws)
    variance, fourth, mean = float(x.var()), float(np.mean(x**4)), float(x.mean())
    expected_variance = model.stationary_variance()
    expected_fourth = model.stationary_fourth_moment()
    mean_bound = 4.0 * math.sqrt(expected_variance / draws)
    return CheckResult(
        name="arch_moments",
        passed=(
            abs(variance / expected_variance - 1.0) <= 0.02
            and abs(fourth / expected_fourth - 1.0) <= 0.2
            and abs(mean) <= mean_bound
        ),
        measured=variance,
        expected=expected_variance,
        detail=(
            f"fourth moment={fourth:.5g} (expected {expected_fourth:.5g}), "
            f"mean={mean:.3g} (bound {mean_bound:.3g})"
        ),
    )


def check_arch_batch_variance(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Compare the closed-form theoretical batch variance to a direct sum.

    The commonly displayed closed form is reported alongside for comparison.
    """
    model = Arch1Model()
    largest, gaps = 0.0, []
    for t in range(1, 9):
        lower, upper = DEFAULT_SCHEDULE.batch_bound(t - 1), DEFAULT_SCHEDULE.batch_bound(t)
        k = np.arange(lower + 1, upper + 1, dtype=np.float64)
        direct = float(np.mean(model.beta * (1 - model.alpha**k) / (1 - model.alpha)))
        closed = model.theoretical_batch_variance(DEFAULT_SCHEDULE, t)
        largest = max(largest, abs(closed - direct))
        gaps.append(abs(model.displayed_batch_variance(DEFAULT_SCHEDULE, t) - closed))
    return CheckResult(
        name="arch_batch_variance",
        passed=largest <= 1e-12,
        measured=largest,
        expected=0.0,
        detail=f"largest gap to the displayed closed form over t=1..8: {max(gaps):.3g}",
    )


def _integral(f: Callable[[float], float]) -> float:
    value, _ = quad(f, 0.0, 1.0)
    return float(value)


def check_cv_optimal_parameter(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Compare the optimal control variate parameter of u^2/2 to quadrature."""
    oracle = -12.0 * _integral(lambda u: 0.5 * u * u * (u - 0.5))
    (value,) = USQ_HALF.optimal_parameter()
    return CheckResult(
        name="cv_optimal_parameter",
        passed=abs(value - oracle) <= 1e-12 and abs(oracle + 0.5) <= 1e-12,
        measured=value,
        expected=-0.5,
    )


def check_cv_variance_identity(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check the crude and the minimal control variate variances of u^2/2 by quadrature."""
    mean = _integral(lambda u: 0.5 * u * u)
    crude = _integral(lambda u: 0.25 * u**4) - mean**2
    model = ControlVariateModel(USQ_HALF)
    minimal = model.conditional_variance(np.asarray(USQ_HALF.optimal_parameter()))
    oracle_minimal = crude - 0.25 / 12.0
    return CheckResult(
        name="cv_variance_identity",
        passed=(
            abs(crude - 1.0 / 45.0) <= 1e-12
            and abs(model.conditional_variance() - crude) <= 1e-12
            and abs(minimal - oracle_minimal) <= 1e-12
        ),
        measured=minimal,
        expected=1.0 / 45.0 - 1.0 / 48.0,
        detail=f"crude variance {crude:.6g}",
    )


def check_cv_limits(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check a single adaptive control variate path of 10^5 samples against its limits."""
    config = StoppingConfig(epsilon=0.01, delta=0.05)
    adaptive = ControlVariateModel(USQ_HALF)
    stream = RngStream(seed, purpose="verify", cell=3)
    batches = [
        stats for stats, _ in iter_batches(adaptive, DEFAULT_SCHEDULE, config, stream, t_max=10)
    ]
    last = batches[-1]
    (theta,) = adaptive.parameter()
    total = sum(stats.mean * stats.batch_size for stats in batches)
    count = sum(stats.batch_size for stats in batches)
    estimate = total / count
    variance = last.variance_empirical or 0.0

    crude = ControlVariateModel(USQ_HALF, adaptive=False)
    crude_stream = RngStream(seed, purpose="verify", cell=4)
    *_, (crude_last, _) = iter_batches(crude, DEFAULT_SCHEDULE, config, crude_stream, t_max=10)
    crude_variance = crude_last.variance_empirical or 0.0

    bound = 4.0 * math.sqrt(variance / count)
    return CheckResult(
        name="cv_limits",
        passed=(
            abs(theta + 0.5) <= 0.02
            and 1.25e-3 <= variance <= 1.55e-3
            and 0.021 <= crude_variance <= 0.024
            and abs(estimate - 1.0 / 6.0) <= bound
        ),
        measured=variance,
        expected=1.0 / 45.0 - 1.0 / 48.0,
        detail=(
            f"theta={theta:.4f}, crude variance={crude_variance:.4g}, "
            f"estimate={estimate:.6f} over {count} samples"
        ),
    )


def check_unbiasedness(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Check that the resampled output is unbiased for independent standard normal samples.

    The mean of the original stopping batch is reported alongside, since it may be biased.
    """
    runs = 2000
    config = StoppingConfig(epsilon=0.2, delta=0.1)
    mu_star, mu_at_stop = np.empty(runs), np.empty(runs)
    for run in range(runs):
        stream = RngStream(seed, purpose="verify", cell=5, run=run)
        outcome = run_stopping(IidModel(), DEFAULT_SCHEDULE, config, stream)
        mu_star[run], mu_at_stop[run] = outcome.mu_star, outcome.mu_at_stop
    mean = float(mu_star.mean())
    standard_error = float(mu_star.std(ddof=1)) / math.sqrt(runs)
    return CheckResult(
        name="unbiasedness",
        passed=abs(mean) <= 3.0 * standard_error,
        measured=mean,
        expected=0.0,
        detail=(
            f"standard error {standard_error:.3g}; "
            f"mean of the original stopping batch {float(mu_at_stop.mean()):.3g}"
        ),
    )


def check_stopping_scaling(draws: int = DEFAULT_DRAWS, seed: int = 0) -> CheckResult:
    """Compare median stopping batches to their asymptotic prediction.

    Independent standard normal samples under the fifth-power schedule, with the
    empirical variance and no inflation, stop near :func:`predicted_stopping_batch`
    with ``c = 1/5`` and ``q = 2``. Dividing the precision by four should then
    roughly double the stopping batch.
    """
    runs, delta = 200, 0.05
    medians, predictions = [], []
    for cell, epsilon in enumerate((0.05, 0.0125), start=6):
        config = StoppingConfig(epsilon=epsilon, delta=delta, inflation="none")
        taus = [
            run_stopping(
                IidModel(),
                DEFAULT_SCHEDULE,
                config,
                RngStream(seed, purpose="verify", cell=cell, run=run),
            ).tau
            for run in range(runs)
        ]
        medians.append(float(np.median(taus)))
        predictions.append(predicted_stopping_batch(epsilon, delta, 0.2, 2.0))
    ratio = medians[1] / medians[0]
    expected = predictions[1] / predictions[0]
    return CheckResult(
        name="stopping_scaling",
        passed=(
            all(abs(m - p) <= 1.0 for m, p in zip(medians, predictions, strict=True))
            and abs(ratio / expected - 1.0) <= 0.2
        ),
        measured=ratio,
        expected=expected,
        detail=(
            f"median stopping batches {medians[0]:g} and {medians[1]:g}, "
            f"predicted {predictions[0]:.4g} and {predictions[1]:.4g}"
        ),
    )


#: The checks, by name
CHECKS: dict[str, Check] = {
    "normal_cdf": check_normal_cdf,
    "normal_quantile": check_normal_quantile,
    "scaled_t_moments": check_scaled_t_moments,
    "arch_stability": check_arch_stability,
    "arch_moments": check_arch_moments,
    "arch_batch_variance": check_arch_batch_variance,
    "cv_optimal_parameter": check_cv_optimal_parameter,
    "cv_variance_identity": check_cv_variance_identity,
    "cv_limits": check_cv_limits,
    "unbiasedness": check_unbiasedness,
    "stopping_scaling": check_stopping_scaling,
}


def run_checks(
    names: Iterable[str] | None = None,
    *,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    progress: bool = True,
) -> list[CheckResult]:
    """Run verification checks.

    :param names: The names of the checks to run, defaults to all of :data:`CHECKS`
    :param draws: The number of draws for the moment checks
    :param seed: The base seed
    :param progress: Whether to show a progress bar
    :return: The results, in the order the checks were requested
    :raises ValueError: If a check name is unknown
    """
    names = list(CHECKS) if names is None else list(names)
    unknown = sorted(set(names).difference(CHECKS))
    if unknown:
        raise ValueError(f"unknown checks: {unknown}. Use some of {sorted(CHECKS)}")
    if draws < 1:
        raise ValueError(f"need at least one draw: {draws}")
    rv = []
    for name in tqdm(names, desc="Verifying", unit="check", disable=not progress):
        result = CHECKS[name](draws, seed)
        logger.info("%s: passed=%s measured=%s", name, result.passed, result.measured)
        rv.append(result)
    return rv
