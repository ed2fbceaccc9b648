"""Utils module initialization."""

from cmml_cli.utils.logger import get_logger, log
from cmml_cli.utils.exceptions import (
    CMMLError,
    ShapeError,
    TapeError,
    NonFiniteError,
    OptimizerError,
    DataError,
    TaskConstructionError,
    ModelConfigError,
    NonFiniteLossError,
    MetricError,
    BenchmarkError,
    CheckpointError,
    ConfigurationError,
    ValidationError,
)

__all__ = [
    "get_logger",
    "log",
    "CMMLError",
    "ShapeError",
    "TapeError",
    "NonFiniteError",
    "OptimizerError",
    "DataError",
    "TaskConstructionError",
    "ModelConfigError",
    "NonFiniteLossError",
    "MetricError",
    "BenchmarkError",
    "CheckpointError",
    "ConfigurationError",
    "ValidationError",
]
