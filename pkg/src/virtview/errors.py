"""Exception types raised across the package.

Each class names one failure category so callers (and the CLI's exit-code
mapping) can react without parsing messages.
"""


class VirtviewError(Exception):
    """Base class for all package errors."""


class ConfigError(VirtviewError):
    """Invalid configuration value (rejected before any computation)."""


class DataError(VirtviewError):
    """Malformed or unreadable dataset / checkpoint file."""


class AllPixelsInvalid(VirtviewError):
    """Depth image contains no valid (non-zero) pixel."""


class NonPositiveDepth(VirtviewError):
    """Projection requested for points at or behind the camera plane."""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"points with non-positive depth at indices {self.indices[:10]}")


class EmptyCloud(VirtviewError):
    """Operation requires a non-empty point cloud."""


class InvalidRange(ConfigError):
    """Virtual-view sampling grid or angle range is invalid."""


class UnknownSubset(ConfigError):
    """No default view mask for the requested subset size."""


class ShapeMismatch(VirtviewError):
    """Array input does not match the configured shape."""


class FrameMismatch(VirtviewError):
    """Operands live in different camera frames."""


class LengthMismatch(VirtviewError):
    """Sequence operands have different lengths."""


class BadN(ConfigError):
    """Selection size outside [1, M]."""


class EmptyDataset(DataError):
    """Training requires at least one sample."""


class NonFiniteLoss(VirtviewError):
    """Training aborted because the loss became NaN or infinite."""

    def __init__(self, epoch, step, value):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")


class CenterBehindCamera(VirtviewError):
    """Crop center has non-positive depth."""


class AnglesOutOfRange(VirtviewError):
    """Pose angles violate the joint limits of the hand model."""
