"""Records produced by the stopping engine, the harness, and the verification suite."""

from __future__ import annotations

from typing import Any, Literal, TypeAlias

from pydantic import BaseModel, ConfigDict, Field

__all__ = [
    "BatchStatistics",
    "CellReport",
    "CheckResult",
    "GridSummary",
    "InflationKind",
    "MetricSummary",
    "StoppingOutcome",
    "VarianceKind",
]

#: Which batch variance the stopping criterion is evaluated with
VarianceKind: TypeAlias = Literal["empirical", "conditional", "theoretical"]

#: How the variance estimate is inflated in early batches
InflationKind: TypeAlias = Literal["inv_t", "none", "table"]


class BatchStatistics(BaseModel):
    """Statistics of a single batch of the original path.

    All variances are squared quantities: the theoretical :math:`v_0^2(t)`, the
    conditional :math:`v_1^2(t)`, and the empirical :math:`v_2^2(t)` with the
    divisor :math:`|M(t)| - 1`.
    """

    model_config = ConfigDict(frozen=True)

    t: int = Field(..., ge=1)
    batch_size: int = Field(..., ge=1)
    mean: float
    variance_empirical: float | None = Field(
        None, description="The unbiased sample variance, undefined for single-sample batches"
    )
    variance_biased: float = Field(..., description="The sample variance with divisor |M(t)|")
    variance_conditional: float | None = None
    variance_theoretical: float | None = None
    parameter: tuple[float, ...] | None = Field(
        None, description="The adaptive parameter the batch was sampled with"
    )
    inflation: float = Field(0.0, description="The inflation a(t) added to the deviation")
    criterion: float | None = Field(
        None, description="The criterion 2(1 - Phi(...)) for the configured variance kind"
    )

    def variance_of(self, kind: VarianceKind) -> float | None:
        """Get the batch variance of the given kind, if available."""
        match kind:
            case "empirical":
                return self.variance_empirical
            case "conditional":
                return self.variance_conditional
            case "theoretical":
                return self.variance_theoretical
            case _:
                raise ValueError(f"invalid variance kind: {kind}")


class StoppingOutcome(BaseModel):
    """The result of a stopped run."""

    model_config = ConfigDict(frozen=True)

    tau: int = Field(..., ge=1, description="The stopping batch index")
    mu_star: float = Field(..., description="The mean of the resampled batch")
    mu_at_stop: float = Field(..., description="The mean of the original batch tau")
    v_at_stop: float | None = Field(None, description="The batch variance used at tau")
    total_samples: int = Field(..., description="m(tau) original plus |M(tau)| resampled samples")
    criterion_value_at_stop: float | None = None
    hit_cap: bool = False

    def to_record(self) -> dict[str, Any]:
        """Get the flat record printed by the command line interface."""
        return {
            "tau": self.tau,
            "mu_star": self.mu_star,
            "mu_at_stop": self.mu_at_stop,
            "v_at_stop": self.v_at_stop,
            "criterion": self.criterion_value_at_stop,
            "total_samples": self.total_samples,
            "hit_cap": self.hit_cap,
        }


class CellReport(BaseModel):
    """Reliability and complexity at a single grid point."""

    epsilon: float
    delta: float
    runs: int
    successes: int
    p: float = Field(..., ge=0, le=1, description="The empirical success probability")
    reliability: float = Field(..., description="p / (1 - delta)")
    complexity: float = Field(..., description="The mean of tau^ell - (tau - 1)^ell")
    mean_tau: float
    capped: int = Field(..., description="The number of runs that hit the batch cap")
    mean_total_samples: float
    mean_abs_error: float


class MetricSummary(BaseModel):
    """The mean, minimum, and maximum of a metric over the grid."""

    mean: float
    min: float
    max: float


class GridSummary(BaseModel):
    """Summary statistics of reliability and complexity over the grid."""

    reliability: MetricSummary
    complexity: MetricSummary


class CheckResult(BaseModel):
    """The outcome of a verification check."""

    name: str
    passed: bool
    measured: float
    expected: float
    detail: str = ""
