"""Exception hierarchy.

Three branches mirror the CLI exit codes: ConfigError (exit 1),
DataError (exit 2), UpstreamError (exit 3).
"""


class DialogsegError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DialogsegError):
    """Invalid or inconsistent configuration."""


class DataError(DialogsegError):
    """Problem with user-supplied data (corpora, predictions, stores)."""


class CorpusParseError(DataError):
    """Corpus bytes could not be parsed at all.

    ``offset`` is the byte offset of the first unparseable position when
    known, else None.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class CorpusSchemaError(DataError):
    """Corpus parsed but violated the expected shape."""


class EvaluationError(DataError):
    """Predictions and reference corpus cannot be matched up."""


class UpstreamError(DialogsegError):
    """Failure attributable to an LLM or embedding provider."""


class TransportError(UpstreamError):
    """HTTP transport failed after exhausting retries."""


class ReplayMissError(UpstreamError):
    """Replay backend had no fixture for a request.

    ``digest`` names the missing fixture so it can be recorded.
    """

    def __init__(self, message: str, digest: str):
        super().__init__(message)
        self.digest = digest


class ResponseParseError(UpstreamError):
    """Model response contained no usable JSON value."""


class ResponseValidationError(UpstreamError):
    """Model response parsed but violated the expected schema."""


class SampleRejectedError(UpstreamError):
    """A synthesized sample failed validation after the retry.

    Carries the offending draft and its violations for audit.
    """

    def __init__(self, message: str, violations: list[str], draft: object):
        super().__init__(message)
        self.violations = violations
        self.draft = draft


class ProviderError(UpstreamError):
    """Embedding provider failed or returned malformed data."""


class PipelineError(UpstreamError):
    """A pipeline stage failed terminally; names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage} stage failed: {message}")
        self.stage = stage
