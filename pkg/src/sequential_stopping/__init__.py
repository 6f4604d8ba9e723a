"""Sequential stopping rules for Monte Carlo estimation of a mean."""

from .harness import EvalGrid, GridReport, build_grid, evaluate, reliability_floor
from .models import BatchStatistics, CellReport, StoppingOutcome
from .process import (
    Arch1Model,
    ControlVariateModel,
    IidModel,
    ModelFactory,
    PolynomialIntegrand,
    ProcessModel,
    parse_model,
)
from .schedule import DEFAULT_SCHEDULE, BatchSchedule, parse_schedule
from .stats import BatchAccumulator, RngStream, normal_cdf, normal_quantile
from .stopping import (
    StoppingConfig,
    criterion_probability,
    iter_batches,
    run_stopping,
    should_stop,
)

__all__ = [
    "DEFAULT_SCHEDULE",
    "Arch1Model",
    "BatchAccumulator",
    "BatchSchedule",
    "BatchStatistics",
    "CellReport",
    "ControlVariateModel",
    "EvalGrid",
    "GridReport",
    "IidModel",
    "ModelFactory",
    "PolynomialIntegrand",
    "ProcessModel",
    "RngStream",
    "StoppingConfig",
    "StoppingOutcome",
    "build_grid",
    "criterion_probability",
    "evaluate",
    "iter_batches",
    "normal_cdf",
    "normal_quantile",
    "parse_model",
    "parse_schedule",
    "reliability_floor",
    "run_stopping",
    "should_stop",
]
