"""Exception types raised across the package.

Every operation reports bad input as :class:`InvalidArgumentError`; the more specific classes
carry the extra context (line number, event index, tensor role) the caller needs to fix it.
"""

from typing import Optional


class SVSError(Exception):
    """Base class for every error raised by ``svs``."""


class InvalidArgumentError(SVSError, ValueError):
    pass


class ScoreParseError(SVSError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DegenerateDurationError(SVSError):
    def __init__(self, event_index: int, duration_sec: float, frame_rate_hz: float):
        super().__init__(
            f"event {event_index} ({duration_sec:.4f} s) maps to 0 frames at {frame_rate_hz:g} fps"
        )
        self.event_index = event_index


class NoVoicedOverlapError(SVSError):
    """Reference and synthesized F0 tracks share no voiced frame."""


class DegenerateEmbeddingError(SVSError):
    """A speaker embedding has zero norm, so cosine similarity is undefined."""


class CheckpointFormatError(SVSError):
    pass


class FeatureFormatError(SVSError):
    pass


class NonFiniteLossError(SVSError):
    def __init__(self, role: str, step: Optional[int] = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in '{role}'{where}")
        self.role = role
        self.step = step


class DataError(SVSError):
    def __init__(self, message: str, utterance_id: Optional[str] = None):
        if utterance_id is not None:
            message = f"utterance '{utterance_id}': {message}"
        super().__init__(message)
        self.utterance_id = utterance_id


class InvariantViolationError(SVSError, RuntimeError):
    """Internal consistency check failed; indicates a bug, not bad input."""
