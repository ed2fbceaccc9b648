"""Custom exceptions for cmml-cli."""

from typing import Optional


class CMMLError(Exception):
    """Base exception for cmml-cli."""
    pass


class ShapeError(CMMLError):
    """Raised when tensor shapes do not conform for an operation."""
    pass


class TapeError(CMMLError):
    """Raised on misuse of a gradient tape (stale, foreign or non-scalar root)."""
    pass


class NonFiniteError(CMMLError):
    """Raised when an operation produces NaN or Inf values."""
    pass


class OptimizerError(CMMLError):
    """Raised when optimizer state does not match the parameters."""
    pass


class DataError(CMMLError):
    """Raised when input data cannot be read or is invalid."""
    pass


class TaskConstructionError(DataError):
    """Raised when no usable meta-task can be built."""
    pass


class ModelConfigError(CMMLError):
    """Raised when a model configuration is inconsistent."""
    pass


class NonFiniteLossError(CMMLError):
    """Raised when a task loss is NaN or Inf."""

    def __init__(self, task_id: int, value: float):
        self.task_id = task_id
        self.value = value
        super().__init__(f"Non-finite loss {value} on task {task_id}")


class MetricError(CMMLError):
    """Raised when a metric is undefined for its inputs."""
    pass


class BenchmarkError(CMMLError):
    """Raised when benchmarking fails."""
    pass


class CheckpointError(CMMLError):
    """Raised when a checkpoint cannot be written or read."""
    pass


class ConfigurationError(CMMLError):
    """Raised when configuration is invalid."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"key '{key}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class ValidationError(CMMLError):
    """Raised when validation fails."""
    pass
