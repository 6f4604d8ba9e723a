"""Branchable stochastic processes whose samples have a constant conditional mean.

Every model produces a sequence :math:`X_1, X_2, \\dots` with
:math:`\\mathbb{E}_{k-1}[X_k] = \\mu`. Models are sampled batch by batch, can
report the conditional variance :math:`\\operatorname{Var}_{k-1}(X_k)` of each
sample, and can be checkpointed at a batch boundary and restored into a copy,
which is how a batch is resampled independently of the original path.
"""

from __future__ import annotations

import copy
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Literal, TypeAlias, TypeVar

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .schedule import BatchSchedule
from .stats import BatchAccumulator, BatchSummary, RngStream, sample_scaled_t

__all__ = [
    "CHUNK_SIZE",
    "USQ_HALF",
    "Arch1Model",
    "CheckpointMismatchError",
    "ControlVariateModel",
    "IidModel",
    "ModelFactory",
    "ModelState",
    "PolynomialIntegrand",
    "ProcessModel",
    "branch_for_resample",
    "parse_model",
]

logger = logging.getLogger(__name__)

#: The largest number of samples drawn at once, bounding memory use for huge batches
CHUNK_SIZE = 1 << 20

Samples: TypeAlias = tuple[NDArray[np.float64], NDArray[np.float64] | None]
M = TypeVar("M", bound="ProcessModel")


class CheckpointMismatchError(ValueError):
    """Raised when restoring a checkpoint into a model of a different kind."""


@dataclass(frozen=True)
class ModelState:
    """An opaque snapshot of a model's mutable state."""

    kind: str
    values: tuple[Any, ...]


class ProcessModel(ABC):
    """A stochastic sequence with a constant conditional mean."""

    #: A short name for the kind of model, used to match checkpoints
    kind: ClassVar[str]
    #: Whether the model emits a conditional variance term with each sample
    has_conditional_variance: ClassVar[bool] = True

    @abstractmethod
    def sample_batch(self, stream: RngStream, size: int) -> Samples:
        """Draw the next consecutive samples.

        :param stream: The random stream, owned by the caller
        :param size: The number of samples
        :return: A pair of the samples and their conditional variances, if available
        """

    def next_sample(self, stream: RngStream) -> tuple[float, float | None]:
        """Draw a single sample and its conditional variance, if available."""
        x, cond_var = self.sample_batch(stream, 1)
        return float(x[0]), None if cond_var is None else float(cond_var[0])

    @abstractmethod
    def checkpoint(self) -> ModelState:
        """Snapshot the mutable state."""

    @abstractmethod
    def _restore(self, values: tuple[Any, ...]) -> None:
        """Restore the mutable state from validated checkpoint values."""

    def restore(self, state: ModelState) -> None:
        """Restore the mutable state from a checkpoint.

        :raises CheckpointMismatchError: If the checkpoint was taken from another kind of model
        """
        if state.kind != self.kind:
            raise CheckpointMismatchError(
                f"can not restore a {state.kind} checkpoint into a {self.kind} model"
            )
        self._restore(state.values)

    def on_batch_end(self, summary: BatchSummary) -> None:  # noqa:B027
        """Update per-batch parameters once a batch of the original path is complete."""

    @abstractmethod
    def true_mean(self) -> float:
        """Get the true mean, for evaluation only."""

    def theoretical_batch_variance(self, schedule: BatchSchedule, t: int) -> float | None:
        """Get the theoretical batch variance of batch t, if it has a closed form."""
        return None

    def parameter(self) -> tuple[float, ...] | None:
        """Get the current adaptive parameter, if the model has one."""
        return None

    def copy(self: M) -> M:
        """Get an independent copy of the model, state included."""
        return copy.deepcopy(self)


class IidModel(ProcessModel):
    """Independent, identically distributed samples.

    The ``uniform`` distribution is uniform on :math:`\\mu \\pm \\sqrt{3\\sigma^2}`.
    """

    kind = "iid"

    def __init__(
        self,
        distribution: Literal["normal", "uniform"] = "normal",
        mean: float = 0.0,
        variance: float = 1.0,
    ) -> None:
        """Instantiate the model.

        :param distribution: Either ``normal`` or ``uniform``
        :param mean: The mean
        :param variance: The variance, which may be zero for a degenerate model
        :raises ValueError: If the distribution is unknown or the parameters are invalid
        """
        if distribution not in {"normal", "uniform"}:
            raise ValueError(f"invalid distribution: {distribution}")
        if not math.isfinite(mean):
            raise ValueError(f"mean must be finite: {mean}")
        if not (math.isfinite(variance) and variance >= 0):
            raise ValueError(f"variance must be finite and non-negative: {variance}")
        self.distribution = distribution
        self.mean = mean
        self.variance = variance

    def __repr__(self) -> str:
        return f"IidModel({self.distribution!r}, mean={self.mean}, variance={self.variance})"

    def sample_batch(self, stream: RngStream, size: int) -> Samples:
        """Draw independent samples."""
        if self.distribution == "normal":
            x = self.mean + math.sqrt(self.variance) * stream.standard_normal(size)
        else:
            half_width = math.sqrt(3.0 * self.variance)
            x = self.mean + half_width * (2.0 * stream.uniform(size) - 1.0)
        return x, np.full(size, self.variance)

    def checkpoint(self) -> ModelState:
        """Snapshot the model, which is stateless."""
        return ModelState(self.kind, ())

    def _restore(self, values: tuple[Any, ...]) -> None:
        pass

    def true_mean(self) -> float:
        """Get the mean."""
        return self.mean

    def theoretical_batch_variance(self, schedule: BatchSchedule, t: int) -> float | None:
        """Get the variance, which is the same for every batch."""
        return self.variance


class Arch1Model(ProcessModel):
    """An ARCH(1) process with unit-variance Student-t innovations.

    The samples follow :math:`X_k = \\sqrt{\\beta + \\alpha X_{k-1}^2} V_k` from
    :math:`X_0 = 0`, where the :math:`V_k` are independent scaled Student-t
    variables with ``dof`` degrees of freedom. The conditional mean is zero and
    the conditional variance is :math:`\\beta + \\alpha X_{k-1}^2`.
    """

    kind = "arch1"

    def __init__(self, alpha: float = 0.03, beta: float = 0.3, dof: int = 6) -> None:
        """Instantiate the model.

        :param alpha: The weight of the lagged square, in (0, 1)
        :param beta: The constant of the conditional variance, positive
        :param dof: The degrees of freedom of the innovations, at least 5
        :raises ValueError: If the parameters are out of range or the fourth moment is unstable
        """
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1): {alpha}")
        if not (math.isfinite(beta) and beta > 0):
            raise ValueError(f"beta must be positive: {beta}")
        if dof < 5:
            raise ValueError(f"degrees of freedom must be at least 5: {dof}")
        self.alpha = alpha
        self.beta = beta
        self.dof = dof
        ratio = self.stability_ratio()
        if ratio >= 1:
            raise ValueError(
                f"fourth moment does not stay bounded: 3 alpha^2 (n-2)/(n-4) = {ratio} >= 1"
            )
        self.lag = 0.0

    def __repr__(self) -> str:
        return f"Arch1Model(alpha={self.alpha}, beta={self.beta}, dof={self.dof})"

    def sample_batch(self, stream: RngStream, size: int) -> Samples:
        """Run the recursion for the next samples."""
        innovations = sample_scaled_t(stream, self.dof, size).tolist()
        alpha, beta = self.alpha, self.beta
        x = np.empty(size)
        cond_var = np.empty(size)
        lag = self.lag
        for k, v in enumerate(innovations):
            c = beta + alpha * lag * lag
            cond_var[k] = c
            lag = math.sqrt(c) * v
            x[k] = lag
        self.lag = lag
        return x, cond_var

    def checkpoint(self) -> ModelState:
        """Snapshot the last sample, which is the lag of the next one."""
        return ModelState(self.kind, (self.lag,))

    def _restore(self, values: tuple[Any, ...]) -> None:
        (self.lag,) = values

    def true_mean(self) -> float:
        """Get the mean, which is zero."""
        return 0.0

    def theoretical_batch_variance(self, schedule: BatchSchedule, t: int) -> float:
        """Get the average unconditional variance over batch t.

        Starting from :math:`X_0 = 0`, the variance of the k-th sample is
        :math:`\\beta(1-\\alpha^k)/(1-\\alpha)`. Averaging over the batch sums
        the geometric series in closed form.
        """
        lower, upper = schedule.batch_bound(t - 1), schedule.batch_bound(t)
        geometric = (self.alpha ** (lower + 1) - self.alpha ** (upper + 1)) / (1.0 - self.alpha)
        return self.stationary_variance() * (1.0 - geometric / (upper - lower))

    def displayed_batch_variance(self, schedule: BatchSchedule, t: int) -> float:
        """Evaluate the closed form usually printed with this model, for comparison.

        The form :math:`\\beta/(1-\\alpha)(1 - (\\alpha^{m(t-1)+1} - \\alpha^{m(t)})/2)`
        differs from the exact average in :meth:`theoretical_batch_variance` in the
        divisor of the geometric remainder, so this is only reported side by side
        with the exact value.
        """
        lower, upper = schedule.batch_bound(t - 1), schedule.batch_bound(t)
        return self.stationary_variance() * (
            1.0 - (self.alpha ** (lower + 1) - self.alpha**upper) / 2.0
        )

    def stationary_variance(self) -> float:
        """Get the limit of the variance, beta / (1 - alpha)."""
        return self.beta / (1.0 - self.alpha)

    def stationary_fourth_moment(self) -> float:
        """Get the limit of the fourth moment."""
        a, b, n = self.alpha, self.beta, self.dof
        return 3 * b * b * (1 + a) * (n - 2) / ((1 - a) * (n - 4 - 3 * a * a * (n - 2)))

    def stability_ratio(self) -> float:
        """Get 3 alpha^2 (n-2)/(n-4), which must be below one for a bounded fourth moment."""
        return 3 * self.alpha**2 * (self.dof - 2) / (self.dof - 4)


class PolynomialIntegrand(BaseModel):
    """An additive polynomial integrand on the unit cube.

    The integrand is :math:`\\Psi(u) = \\sum_{i=1}^d p(u_i)` where
    :math:`p(u) = \\sum_j c_j u^j`. All moments needed by the control variate
    model are exact polynomial integrals.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    coefficients: tuple[float, ...] = Field(..., min_length=1)
    dimension: int = Field(default=1, ge=1)
    name: str | None = None

    @field_validator("coefficients")
    @classmethod
    def _check_coefficients(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(c) for c in v):
            raise ValueError(f"coefficients must be finite: {v}")
        return v

    @property
    def polynomial(self) -> Polynomial:
        """Get the univariate polynomial p."""
        return Polynomial(self.coefficients)

    def __call__(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluate the integrand on points of shape ``(size, dimension)``."""
        return np.asarray(self.polynomial(u).sum(axis=-1), dtype=np.float64)

    def _integral(self, p: Polynomial) -> float:
        antiderivative = p.integ()
        return float(antiderivative(1.0) - antiderivative(0.0))

    def mean(self) -> float:
        """Get the exact integral of the integrand over the unit cube."""
        return self.dimension * self._integral(self.polynomial)

    def variance(self) -> float:
        """Get the exact variance of the integrand under uniform sampling."""
        p = self.polynomial
        m1 = self._integral(p)
        return self.dimension * (self._integral(p * p) - m1 * m1)

    def optimal_parameter(self) -> tuple[float, ...]:
        """Get the variance-minimizing control variate coefficients.

        Each coordinate is :math:`-12 \\int_0^1 p(u)(u - 1/2) du`, since the
        uniform coordinates are independent with variance 1/12.
        """
        value = -12.0 * self._integral(self.polynomial * Polynomial([-0.5, 1.0]))
        return (value,) * self.dimension

    def to_string(self) -> str:
        """Serialize the integrand into its string form."""
        if self.name is not None:
            return self.name
        rv = "poly:" + ",".join(repr(c) for c in self.coefficients)
        if self.dimension != 1:
            rv += f":{self.dimension}"
        return rv


#: The integrand u^2 / 2 on the unit interval, with mean 1/6 and optimal parameter -1/2
USQ_HALF = PolynomialIntegrand(coefficients=(0.0, 0.0, 0.5), name="usq_half")


class ControlVariateModel(ProcessModel):
    """Adaptive linear control variates for integrating a function over the unit cube.

    Each sample is :math:`X_k = \\Psi(U_k) + \\langle \\theta, U_k - 1/2 \\rangle`
    with uniform :math:`U_k`. The parameter :math:`\\theta` is frozen during a
    batch and, after the batch, replaced by
    :math:`-12 \\cdot \\operatorname{mean}(\\Psi(U_k)(U_k - 1/2))` over that batch's
    own draws. With ``adaptive=False`` the parameter stays at zero, which is
    crude Monte Carlo.
    """

    kind = "cv"

    def __init__(self, integrand: PolynomialIntegrand = USQ_HALF, adaptive: bool = True) -> None:
        """Instantiate the model.

        :param integrand: The integrand
        :param adaptive: Whether to learn the parameter batch by batch
        """
        self.integrand = integrand
        self.adaptive = adaptive
        self.theta = np.zeros(integrand.dimension)
        self._theta_sum = np.zeros(integrand.dimension)
        self._theta_count = 0
        self._mean = integrand.mean()
        self._variance = integrand.variance()
        self._optimal = np.asarray(integrand.optimal_parameter())

    def __repr__(self) -> str:
        return f"ControlVariateModel({self.integrand.to_string()!r}, adaptive={self.adaptive})"

    def sample_batch(self, stream: RngStream, size: int) -> Samples:
        """Draw control-variate samples with the current parameter."""
        u = stream.uniform((size, self.integrand.dimension))
        psi = self.integrand(u)
        centered = u - 0.5
        x = psi + centered @ self.theta
        if self.adaptive:
            self._theta_sum += (psi[:, None] * centered).sum(axis=0)
            self._theta_count += size
        return x, np.full(size, self.conditional_variance())

    def conditional_variance(self, theta: NDArray[np.float64] | None = None) -> float:
        """Get the variance of a sample given the parameter.

        This is the variance of the integrand plus
        :math:`(\\|\\theta\\|^2 - 2\\langle\\theta, \\theta^*\\rangle)/12`,
        minimized at the optimal parameter :math:`\\theta^*`.
        """
        if theta is None:
            theta = self.theta
        return float(self._variance + (theta @ theta - 2.0 * (theta @ self._optimal)) / 12.0)

    def on_batch_end(self, summary: BatchSummary) -> None:
        """Replace the parameter with the estimate from the batch that just ended."""
        if self.adaptive and self._theta_count > 0:
            self.theta = -12.0 * self._theta_sum / self._theta_count
            logger.debug("updated control variate parameter to %s", self.theta)
        self._theta_sum = np.zeros(self.integrand.dimension)
        self._theta_count = 0

    def checkpoint(self) -> ModelState:
        """Snapshot the parameter and the partial sums of the next update."""
        return ModelState(
            self.kind,
            (tuple(self.theta.tolist()), tuple(self._theta_sum.tolist()), self._theta_count),
        )

    def _restore(self, values: tuple[Any, ...]) -> None:
        theta, theta_sum, self._theta_count = values
        self.theta = np.asarray(theta, dtype=np.float64)
        self._theta_sum = np.asarray(theta_sum, dtype=np.float64)

    def true_mean(self) -> float:
        """Get the integral of the integrand."""
        return self._mean

    def parameter(self) -> tuple[float, ...]:
        """Get the parameter used for the current batch."""
        return tuple(self.theta.tolist())


def branch_for_resample(
    model: ProcessModel, checkpoint: ModelState, stream: RngStream, batch_len: int
) -> float:
    """Resample a batch from a checkpoint and get its mean.

    The model is copied and the copy is restored to the checkpoint, so the
    original instance is left untouched. Per-batch updates are never applied
    to the resampled batch.

    :param model: The model whose path is branched
    :param checkpoint: The state at the start of the batch to resample
    :param stream: A branch stream never used for the original path
    :param batch_len: The number of samples in the batch
    :return: The plain average of the resampled batch
    :raises CheckpointMismatchError: If the checkpoint comes from another kind of model
    """
    branch = model.copy()
    branch.restore(checkpoint)
    accumulator = BatchAccumulator()
    remaining = batch_len
    while remaining > 0:
        n = min(remaining, CHUNK_SIZE)
        x, _ = branch.sample_batch(stream, n)
        accumulator.update(x)
        remaining -= n
    return accumulator.mean


class ModelFactory(BaseModel):
    """A picklable recipe for fresh, independent model instances."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    spec: str = Field(..., description="The model string, such as ``arch1:0.03:0.3:6``")

    @model_validator(mode="after")
    def _check_spec(self) -> ModelFactory:
        _build_model(self.spec)
        return self

    def __call__(self) -> ProcessModel:
        """Build a fresh model."""
        return _build_model(self.spec)

    def true_mean(self) -> float:
        """Get the true mean of the models built by this factory."""
        return self().true_mean()

    def __str__(self) -> str:
        return self.spec


def _floats(parts: list[str], spec: str) -> list[float]:
    try:
        return [float(part) for part in parts]
    except ValueError:
        raise ValueError(f"invalid number in model specification: {spec}") from None


def _build_model(spec: str) -> ProcessModel:
    kind, *parts = spec.strip().split(":")
    match kind:
        case "iid":
            distribution = parts[0] if parts else "normal"
            numbers = _floats(parts[1:], spec)
            if len(numbers) > 2:
                raise ValueError(f"iid models take a mean and a variance: {spec}")
            if distribution not in {"normal", "uniform"}:
                raise ValueError(f"invalid distribution in model specification: {spec}")
            return IidModel(distribution, *numbers)  # type:ignore[arg-type]
        case "arch1":
            numbers = _floats(parts, spec)
            if len(numbers) > 3:
                raise ValueError(f"ARCH(1) models take alpha, beta, and dof: {spec}")
            if len(numbers) == 3:
                if not numbers[2].is_integer():
                    raise ValueError(f"degrees of freedom must be an integer: {spec}")
                return Arch1Model(numbers[0], numbers[1], int(numbers[2]))
            return Arch1Model(*numbers)
        case "cv":
            return _build_control_variate(parts, spec)
        case _:
            raise ValueError(f"invalid model specification: {spec}")


def _build_control_variate(parts: list[str], spec: str) -> ControlVariateModel:
    adaptive = True
    if parts and parts[-1] == "crude":
        adaptive = False
        parts = parts[:-1]
    match parts:
        case ["usq_half"]:
            return ControlVariateModel(USQ_HALF, adaptive=adaptive)
        case ["poly", coefficients]:
            dimension = 1
        case ["poly", coefficients, dimension_str]:
            try:
                dimension = int(dimension_str)
            except ValueError:
                raise ValueError(f"invalid dimension in model specification: {spec}") from None
        case _:
            raise ValueError(f"invalid control variate specification: {spec}")
    integrand = PolynomialIntegrand(
        coefficients=tuple(_floats(coefficients.split(","), spec)), dimension=dimension
    )
    return ControlVariateModel(integrand, adaptive=adaptive)


def parse_model(spec: str | ModelFactory) -> ModelFactory:
    """Parse a model specification into a factory.

    :param spec: One of ``iid[:normal|uniform[:mean[:variance]]]``,
        ``arch1[:alpha[:beta[:dof]]]``, ``cv:usq_half``, or ``cv:poly:c0,c1,...[:d]``.
        Control variate specifications take a trailing ``:crude`` to switch off adaptation.
    :return: A factory that builds fresh models
    :raises ValueError: If the specification is invalid
    """
    if isinstance(spec, ModelFactory):
        return spec
    return ModelFactory(spec=spec.strip())
