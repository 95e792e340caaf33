"""Exception hierarchy shared across the package."""


class ChartCFError(Exception):
    """Base class for all package errors."""


class ConfigError(ChartCFError):
    """Bad configuration value or unresolvable path."""


class MissingSlotError(ChartCFError):
    """A prompt template slot has no value in the seed sample."""


class InvalidTemplateError(ChartCFError):
    """Template body does not declare the slots its kind requires."""


class ParseError(ChartCFError):
    """A required section header is absent from a modifier reply."""


class InconsistentResponseError(ChartCFError):
    """Reply claims feasibility but omits the code or answer."""


class AuthError(ChartCFError):
    """HTTP 401/403 from the API; never retried."""


class TransientExhaustedError(ChartCFError):
    """Retryable failures persisted past the retry budget."""


class MalformedReplyError(ChartCFError):
    """API reply carried no assistant message text."""


class JudgeParseError(ChartCFError):
    """Similarity-judge reply unusable even after one re-ask."""


class WorkerDeadError(ChartCFError):
    """Render worker process exited mid-request."""


class PathMismatchError(ChartCFError):
    """Rendered file name differs from the declared save path."""


class ManifestError(ChartCFError):
    """Seed manifest is unreadable or references missing files."""


class EmptyInputError(ChartCFError):
    """Selection or partition called with no scored pairs."""


class MissingImageError(ChartCFError):
    """A referenced image file does not exist at export time."""


class FormattingError(ChartCFError):
    """Record cannot be formatted (e.g. reasoning pair without reasoning)."""


class NonFiniteError(ChartCFError):
    """A loss input (or beta) is NaN or infinite."""
