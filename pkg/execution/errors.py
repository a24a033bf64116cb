"""
Exception hierarchy for the MagNet defense toolkit.

Every error raised on purpose by the library derives from MagnetError so the
CLI can turn it into a one-line diagnostic and a nonzero exit code.
"""

from typing import Optional


class MagnetError(Exception):
    """Base class for all library errors."""


class ConfigurationError(MagnetError, ValueError):
    """Unknown identifier or invalid setting (arch id, policy, norm, loss...)."""


class DatasetLoadError(MagnetError):
    """A dataset source file is missing or fails its sanity check."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class DatasetSizeError(MagnetError):
    """Requested split sizes exceed the examples available."""


class InputShapeError(MagnetError, ValueError):
    """Batch shape does not match what a model or operation expects."""


class TrainingError(MagnetError):
    """Training diverged (non-finite loss or runaway reconstruction error)."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        prefix = f"epoch {epoch}: " if epoch is not None else ""
        super().__init__(f"{prefix}{message}")


class SerializationError(MagnetError):
    """Model archive is unreadable, of another version, or of another architecture."""


class CalibrationError(MagnetError):
    """Threshold calibration was given unusable scores."""


class DetectorStateError(MagnetError):
    """A detector was used before being calibrated."""


class EvaluationError(MagnetError):
    """Evaluation inputs do not belong together (dataset or classifier mismatch)."""
