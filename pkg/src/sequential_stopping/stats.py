"""The statistical kernel: normal distribution, random streams, and batch accumulators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple, TypeAlias, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr, ndtri

__all__ = [
    "PURPOSES",
    "BatchAccumulator",
    "BatchSummary",
    "Purpose",
    "RngStream",
    "StreamKey",
    "normal_cdf",
    "normal_quantile",
    "sample_scaled_t",
]

#: What a random stream is used for
Purpose: TypeAlias = Literal["primary", "verify"]

#: The integer codes of purposes, used as the first element of the spawn key
PURPOSES: dict[Purpose, int] = {"primary": 0, "verify": 1}

Size: TypeAlias = int | tuple[int, ...] | None


@overload
def normal_cdf(x: float) -> float: ...


@overload
def normal_cdf(x: NDArray[np.float64]) -> NDArray[np.float64]: ...


def normal_cdf(x: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
    """Evaluate the standard normal cumulative distribution function.

    :param x: A real number or an array of them
    :return: The probability that a standard normal variable is at most ``x``,
        saturating to 0 and 1 in the tails

    >>> normal_cdf(0.0)
    0.5
    """
    rv = ndtr(x)
    if np.ndim(rv) == 0:
        return float(rv)
    return np.asarray(rv, dtype=np.float64)


@overload
def normal_quantile(p: float) -> float: ...


@overload
def normal_quantile(p: NDArray[np.float64]) -> NDArray[np.float64]: ...


def normal_quantile(p: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
    """Evaluate the inverse of the standard normal cumulative distribution function.

    :param p: A probability strictly between zero and one, or an array of them
    :return: The quantile
    :raises ValueError: If any probability is outside the open unit interval
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError(f"probabilities must lie strictly between 0 and 1: {p}")
    rv = ndtri(arr)
    if np.ndim(rv) == 0:
        return float(rv)
    return np.asarray(rv, dtype=np.float64)


class StreamKey(NamedTuple):
    """The seed material that fully determines a random stream."""

    seed: int
    purpose: Purpose
    cell: int
    run: int
    branch: bool

    def spawn_key(self) -> tuple[int, int, int, int]:
        """Get the spawn key for :class:`numpy.random.SeedSequence`."""
        return PURPOSES[self.purpose], self.cell, self.run, int(self.branch)


class RngStream:
    """A reproducible stream of random numbers.

    Each stream owns a :class:`numpy.random.Generator` backed by PCG64, seeded by
    a :class:`numpy.random.SeedSequence` whose entropy is the base seed and whose
    spawn key is the stream identifier. Streams with different identifiers are
    statistically independent, and streams with equal seed material produce
    identical draws.

    A stream must not be shared between concurrent workers.
    """

    def __init__(
        self,
        seed: int,
        *,
        purpose: Purpose = "primary",
        cell: int = 0,
        run: int = 0,
        branch: bool = False,
    ) -> None:
        """Instantiate the stream.

        :param seed: The 64-bit base seed
        :param purpose: What the stream is used for
        :param cell: The grid cell index
        :param run: The run index within a grid cell
        :param branch: Whether this is the stream used for resampling a batch
        :raises ValueError: If the seed or indices are out of range
        """
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer: {seed}")
        if purpose not in PURPOSES:
            raise ValueError(f"invalid stream purpose: {purpose}")
        if cell < 0 or run < 0:
            raise ValueError(f"stream indices must be non-negative: cell={cell}, run={run}")
        self.key = StreamKey(seed=seed, purpose=purpose, cell=cell, run=run, branch=branch)
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=self.key.spawn_key())
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"RngStream({self.key})"

    def branch_stream(self) -> RngStream:
        """Get the stream used to resample a batch of the path driven by this stream.

        :raises ValueError: If this already is a branch stream
        """
        if self.key.branch:
            raise ValueError("a branch stream can not be branched again")
        seed, purpose, cell, run, _ = self.key
        return RngStream(seed, purpose=purpose, cell=cell, run=run, branch=True)

    def uniform(self, size: Size = None) -> NDArray[np.float64]:
        """Draw uniform variables on [0, 1)."""
        return self.generator.random(size)

    def standard_normal(self, size: Size = None) -> NDArray[np.float64]:
        """Draw standard normal variables."""
        return self.generator.standard_normal(size)

    def chisquare(self, dof: float, size: Size = None) -> NDArray[np.float64]:
        """Draw chi-square variables with the given degrees of freedom."""
        return self.generator.chisquare(dof, size)

    def scaled_t(self, dof: int, size: Size = None) -> NDArray[np.float64]:
        """Draw unit-variance Student-t variables, see :func:`sample_scaled_t`."""
        return sample_scaled_t(self, dof, size)


def sample_scaled_t(stream: RngStream, dof: int, size: Size = None) -> NDArray[np.float64]:
    """Draw Student-t variables scaled to unit variance.

    A standard t variable is a standard normal divided by the square root of an
    independent chi-square over its degrees of freedom. Scaling by
    :math:`\\sqrt{(n-2)/n}` gives mean zero, variance one and fourth moment
    :math:`3(n-2)/(n-4)`.

    :param stream: The stream to draw from
    :param dof: The degrees of freedom, at least 5 so that the fourth moment exists
    :param size: The output shape, or none for a single draw
    :return: The draws
    :raises ValueError: If the degrees of freedom are smaller than 5
    """
    if dof < 5:
        raise ValueError(f"degrees of freedom must be at least 5, got: {dof}")
    z = stream.standard_normal(size)
    chi = stream.chisquare(dof, size)
    return z * np.sqrt((dof - 2) / chi)


class BatchSummary(NamedTuple):
    """Finalized statistics of a batch."""

    mean: float
    variance_unbiased: float | None
    variance_biased: float
    count: int
    conditional_variance: float | None


@dataclass
class BatchAccumulator:
    """A streaming accumulator for the mean and variance of a batch.

    Single values are pushed with Welford's update and arrays are merged with the
    pairwise formula of Chan, Golub and LeVeque, so batches of many millions of
    samples can be accumulated chunk by chunk without losing precision. The
    running sum of conditional variance terms is kept alongside.
    """

    count: int = 0
    total: float = 0.0
    center: float = 0.0
    m2: float = 0.0
    conditional_total: float = 0.0
    conditional_count: int = 0

    def push(self, x: float, cond_var: float | None = None) -> None:
        """Add a single value."""
        self.count += 1
        self.total += x
        delta = x - self.center
        self.center += delta / self.count
        self.m2 += delta * (x - self.center)
        if cond_var is not None:
            self.conditional_total += cond_var
            self.conditional_count += 1

    def update(self, values: ArrayLike, cond_vars: ArrayLike | None = None) -> None:
        """Add an array of values.

        :param values: The values
        :param cond_vars: The conditional variance terms that go with the values, if any
        :raises ValueError: If the conditional variance terms don't match the values in length
        """
        arr = np.asarray(values, dtype=np.float64).ravel()
        n = arr.size
        if n == 0:
            return
        chunk_total = float(arr.sum())
        chunk_mean = chunk_total / n
        chunk_m2 = float(np.square(arr - chunk_mean).sum())

        combined = self.count + n
        delta = chunk_mean - self.center
        self.center += delta * n / combined
        self.m2 += chunk_m2 + delta * delta * self.count * n / combined
        self.count = combined
        self.total += chunk_total

        if cond_vars is not None:
            cv = np.asarray(cond_vars, dtype=np.float64).ravel()
            if cv.size != n:
                raise ValueError(f"got {cv.size} conditional variance terms for {n} values")
            self.conditional_total += float(cv.sum())
            self.conditional_count += n

    @property
    def mean(self) -> float:
        """Get the mean of the accumulated values."""
        if self.count == 0:
            raise ValueError("the mean of an empty batch is undefined")
        return self.total / self.count

    def finalize(self, require_variance: bool = True) -> BatchSummary:
        """Summarize the accumulated values.

        :param require_variance: Whether to fail if there are too few values for the
            unbiased variance. If false, the unbiased variance is none for single values.
        :return: The mean, the unbiased (divisor n-1) and biased (divisor n) variances,
            the count, and the average conditional variance term if every value came with one
        :raises ValueError: If no values were accumulated, or fewer than two
            while the variance is required
        """
        if self.count == 0:
            raise ValueError("can not finalize an empty batch")
        if self.count < 2 and require_variance:
            raise ValueError(f"the variance needs at least two values, got: {self.count}")
        m2 = max(self.m2, 0.0)
        return BatchSummary(
            mean=self.mean,
            variance_unbiased=m2 / (self.count - 1) if self.count >= 2 else None,
            variance_biased=m2 / self.count,
            count=self.count,
            conditional_variance=(
                self.conditional_total / self.conditional_count
                if self.conditional_count == self.count
                else None
            ),
        )
