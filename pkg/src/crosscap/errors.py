"""Exception types shared across the pipeline."""

from __future__ import annotations


class CrosscapError(Exception):
    """Base class for all first-party errors."""


class TransportError(CrosscapError):
    """Backend could not be reached or returned a non-200 status."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class TimeoutError(TransportError):
    """Backend did not answer within the endpoint's timeout budget."""


class EmptyResponse(CrosscapError):
    """Backend answered with empty or whitespace-only content."""


class MalformedReply(CrosscapError):
    """Backend reply cannot be interpreted under the expected format."""


class MissingVerdict(CrosscapError):
    """An entity was referenced that has no entry in the verdict ledger."""


class InsufficientVocabulary(CrosscapError):
    """Not enough negative objects available to build balanced questions."""


class EmptyInput(CrosscapError):
    """An operation that needs at least one element received none."""


class ConfigError(CrosscapError):
    """Invalid pipeline or endpoint configuration."""


class StageError(CrosscapError):
    """A pipeline stage failed; carries the stage name and the image id."""

    def __init__(self, stage: str, image_id: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed for image {image_id!r}: {cause}")
        self.stage = stage
        self.image_id = image_id
        self.cause = cause
