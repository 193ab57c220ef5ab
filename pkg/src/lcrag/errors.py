"""Exception types shared across the lcrag package."""

from __future__ import annotations


class LcragError(Exception):
    """Base class for all lcrag errors."""


class InvalidInput(LcragError):
    """Caller violated an operation precondition."""


class IngestError(LcragError):
    """Corpus ingestion failed (missing/unreadable documents)."""


class IoError(LcragError):
    """A file could not be read or written."""


class FormatError(LcragError):
    """A file or record does not match its documented format."""


class CorruptStore(LcragError):
    """A knowledge-base store failed its integrity checks."""


class DimensionMismatch(LcragError):
    """Vector dimensions disagree."""


class DegenerateVector(LcragError):
    """A vector is zero (or the text produced no tokens) and has no direction."""


class ProviderError(LcragError):
    """A remote embedding/LLM provider call failed.

    `retryable` distinguishes transient transport failures from permanent
    ones such as missing credentials.
    """

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class BatchError(LcragError):
    """A batch embedding call failed for some inputs.

    `outcomes[i]` is either an embedding vector or the stringified error for
    input i, so callers can resume rather than re-run the whole batch.
    """

    def __init__(self, message: str, outcomes: list):
        super().__init__(message)
        self.outcomes = outcomes


class EmptyResponse(LcragError):
    """An LLM returned an empty completion."""


class ParseError(LcragError):
    """A structured LLM response could not be parsed; carries the raw text."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class EmptySegmentation(LcragError):
    """No classified actions were available to segment."""


class MissingInput(LcragError):
    """A required companion record (e.g. a segment's summary) is absent."""


class TemplateError(LcragError):
    """A prompt template is malformed or a placeholder value is missing."""


class VerdictParseError(LcragError):
    """A judge response contained no parseable verdict line."""


class TrialError(LcragError):
    """A judge trial failed after retries; the cell can be re-run."""


class DegenerateAgreement(LcragError):
    """Agreement statistic undefined: zero expected disagreement."""


class NotFound(LcragError):
    """Referenced session/task/resource does not exist."""


class AgentUnavailable(LcragError):
    """The agent pipeline failed; session state remains consistent."""
