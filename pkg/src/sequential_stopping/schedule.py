"""Deterministic batch schedules.

A schedule fixes the cumulative sample counts :math:`m(0) = 0 < m(1) < m(2) < \\dots`
so that batch :math:`t` covers the sample indices :math:`M(t) = \\{m(t-1)+1, \\dots, m(t)\\}`.
The default is the polynomial schedule :math:`m(t) = t^5`.

>>> from sequential_stopping.schedule import parse_schedule
>>> schedule = parse_schedule("poly:5")
>>> schedule.batch_bound(2), schedule.batch_size(3)
(32, 211)
"""

from __future__ import annotations

from functools import lru_cache
from typing import Literal, TypeAlias

from pydantic import BaseModel, ConfigDict, Field, model_validator

__all__ = [
    "DEFAULT_SCHEDULE",
    "UINT64_MAX",
    "BatchSchedule",
    "ScheduleKind",
    "batch_bound",
    "batch_size",
    "parse_schedule",
]

#: The largest sample count a schedule may reach
UINT64_MAX = 2**64 - 1

#: The kinds of schedule that can be constructed
ScheduleKind: TypeAlias = Literal["polynomial", "explicit"]


@lru_cache
def _polynomial_max_batch(exponent: int) -> int:
    """Get the largest t such that t**exponent still fits into 64 unsigned bits."""
    t = int(round(UINT64_MAX ** (1.0 / exponent)))
    while t**exponent > UINT64_MAX:
        t -= 1
    while (t + 1) ** exponent <= UINT64_MAX:
        t += 1
    return t


class BatchSchedule(BaseModel):
    """A deterministic, strictly increasing sequence of batch bounds."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ScheduleKind = "polynomial"
    exponent: int = Field(default=5, ge=1, description="The exponent of m(t) = t**exponent")
    bounds: tuple[int, ...] | None = Field(
        default=None, description="The bounds m(1), m(2), ... of an explicit schedule"
    )

    @model_validator(mode="after")
    def _check_bounds(self) -> BatchSchedule:
        if self.kind == "polynomial":
            if self.bounds is not None:
                raise ValueError("a polynomial schedule can not be given explicit bounds")
            return self
        if not self.bounds:
            raise ValueError("an explicit schedule needs at least one bound")
        previous = 0
        for bound in self.bounds:
            if bound <= previous:
                raise ValueError(f"explicit bounds must increase strictly from zero: {bound}")
            previous = bound
        if previous > UINT64_MAX:
            raise ValueError(f"explicit bound exceeds 64 unsigned bits: {previous}")
        return self

    @classmethod
    def polynomial(cls, exponent: int = 5) -> BatchSchedule:
        """Construct the schedule m(t) = t**exponent."""
        return cls(kind="polynomial", exponent=exponent)

    @classmethod
    def explicit(cls, bounds: list[int] | tuple[int, ...]) -> BatchSchedule:
        """Construct a schedule from its bounds m(1), m(2), ..."""
        return cls(kind="explicit", bounds=tuple(bounds))

    @property
    def max_batch(self) -> int:
        """Get the largest batch index the schedule supports.

        For the polynomial kind, this is where m(t) would overflow 64 unsigned
        bits (7131 for the fifth power). For the explicit kind, this is the
        number of given bounds.
        """
        if self.bounds is not None:
            return len(self.bounds)
        return _polynomial_max_batch(self.exponent)

    def batch_bound(self, t: int) -> int:
        """Get the cumulative sample count m(t).

        :param t: The batch index, starting at zero
        :return: The number of samples consumed by the end of batch t
        :raises ValueError: If the batch index is negative or beyond :attr:`max_batch`
        """
        if t < 0:
            raise ValueError(f"batch index must be non-negative: {t}")
        if t > self.max_batch:
            raise ValueError(f"batch index {t} is beyond the last supported batch {self.max_batch}")
        if t == 0:
            return 0
        if self.bounds is not None:
            return self.bounds[t - 1]
        return t**self.exponent

    def batch_size(self, t: int) -> int:
        """Get the batch cardinality |M(t)| = m(t) - m(t-1).

        :param t: The batch index, starting at one
        :return: The number of samples in batch t
        :raises ValueError: If the batch index is smaller than one
        """
        if t < 1:
            raise ValueError(f"batch sizes are defined from the first batch on, got: {t}")
        return self.batch_bound(t) - self.batch_bound(t - 1)

    def to_string(self) -> str:
        """Serialize the schedule back into its string form."""
        if self.bounds is not None:
            return "explicit:" + ",".join(str(bound) for bound in self.bounds)
        return f"poly:{self.exponent}"

    def __str__(self) -> str:
        return self.to_string()


#: The schedule m(t) = t**5
DEFAULT_SCHEDULE = BatchSchedule.polynomial(5)


def batch_bound(schedule: BatchSchedule, t: int) -> int:
    """Get the cumulative sample count m(t) of a schedule."""
    return schedule.batch_bound(t)


def batch_size(schedule: BatchSchedule, t: int) -> int:
    """Get the batch cardinality |M(t)| of a schedule."""
    return schedule.batch_size(t)


def parse_schedule(spec: str | BatchSchedule) -> BatchSchedule:
    """Parse a schedule from its string form.

    :param spec: Either ``poly:<exponent>`` or ``explicit:<m(1)>,<m(2)>,...``.
        A :class:`BatchSchedule` is passed through unchanged.
    :return: The schedule
    :raises ValueError: If the string can not be parsed
    """
    if isinstance(spec, BatchSchedule):
        return spec
    kind, _, rest = spec.strip().partition(":")
    if kind in {"poly", "polynomial"}:
        if not rest:
            return BatchSchedule.polynomial()
        try:
            exponent = int(rest)
        except ValueError:
            raise ValueError(f"invalid polynomial exponent: {rest}") from None
        return BatchSchedule.polynomial(exponent)
    if kind == "explicit":
        try:
            bounds = [int(part) for part in rest.split(",") if part.strip()]
        except ValueError:
            raise ValueError(f"invalid explicit bounds: {rest}") from None
        return BatchSchedule.explicit(bounds)
    raise ValueError(f"invalid schedule specification: {spec}")
