"""Exception types shared across the workbench."""


class DcplanError(Exception):
    """Base class for all workbench errors."""


class FarFromPath(DcplanError):
    """Query point is too far from the reference path to project."""


class OutOfRange(DcplanError):
    """Arc-length coordinate lies outside the reference path."""


class DegenerateHorizon(DcplanError):
    """Curve horizon is too short to fit a boundary-value polynomial."""


class SamplingExhausted(DcplanError):
    """Rejection sampling failed to find a valid layout."""


class EmptyDataset(DcplanError):
    """An operation that needs data received none."""


class NonFiniteLoss(DcplanError):
    """Training produced a non-finite loss; aborted with diagnostics."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ConfigError(DcplanError):
    """Invalid or unknown configuration content."""
