"""Exception hierarchy shared across all pipeline stages."""


class DomainBridgeError(Exception):
    """Base class for every error raised by this package."""


class IngestionError(DomainBridgeError):
    """Raised when a raw input (video, image file) cannot be decoded."""


class ShapeError(DomainBridgeError):
    """Raised when array/image shapes are incompatible."""


class RangeError(DomainBridgeError):
    """Raised when pixel values fall outside their declared range."""


class SpecError(DomainBridgeError):
    """Raised when a configuration object violates its own invariants."""


class DataError(DomainBridgeError):
    """Raised when a dataset is empty or otherwise degenerate."""


class LabelingError(DomainBridgeError):
    """Raised when labels are required but missing."""


class ConfigError(DomainBridgeError):
    """Raised when a pipeline configuration fails validation."""


class NumericalError(DomainBridgeError):
    """Raised when a numerical routine fails to converge after stabilization."""


class SweepError(DomainBridgeError):
    """Raised when every row of a checkpoint sweep failed."""


class ReportError(DomainBridgeError):
    """Raised when a report is requested for a run with nothing to report."""


class PipelineError(DomainBridgeError):
    """Raised when a pipeline stage fails; names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
