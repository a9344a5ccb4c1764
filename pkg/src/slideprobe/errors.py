"""Exception hierarchy shared across the workbench."""


class SlideprobeError(Exception):
    """Base class for all workbench errors."""


class ValidationError(SlideprobeError):
    """Caller-supplied arguments violate a precondition."""


class IngestError(SlideprobeError):
    """Raster could not be read or ingested."""


class NotFound(SlideprobeError):
    """Unknown slide, level, trace, explanation or dataset id."""


class OutOfBounds(SlideprobeError):
    """Requested patch center lies outside the slide."""


class ConcurrentIngestError(SlideprobeError):
    """A slide with the same id is currently being ingested."""


class NoTissueError(SlideprobeError):
    """Too few pixels above the optical-density threshold to work with."""


class DegenerateStainError(SlideprobeError):
    """The optical-density cloud has no second stain direction."""


class EmptyBagError(SlideprobeError):
    """MIL aggregation over an empty instance bag."""


class BackendError(SlideprobeError):
    """Model backend unavailable or failed."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class ProtocolError(SlideprobeError):
    """Remote inference response violates the wire schema or invariants."""


class VlmError(SlideprobeError):
    """VLM transport failure or empty completion after retries."""


class JudgmentError(SlideprobeError):
    """VLM judgment could not be parsed after retries."""


class ParseError(SlideprobeError):
    """Label text contains zero or conflicting class tokens."""


class DegenerateError(SlideprobeError):
    """Metric undefined: only one class present."""


class EvalAborted(SlideprobeError):
    """Too many per-sample failures to trust the evaluation."""
