"""Exception hierarchy.

The CLI maps :class:`ValidationError` to exit code 1 and :class:`MediaIOError`
(and plain ``OSError``) to exit code 2.
"""


class AvatarError(Exception):
    """Base class for all package errors."""


class ValidationError(AvatarError, ValueError):
    """Input violates a documented contract or invariant."""


class MediaIOError(AvatarError, OSError):
    """A file could not be read or written."""


class ClipFormatError(ValidationError):
    """A clip directory is inconsistent with its ``clip.json``."""


class AudioFormatError(ValidationError):
    """Unsupported or corrupt WAV file."""


class StorylineValidationError(ValidationError):
    """A storyline (usually from an external director) breaks an invariant."""


class StitchError(ValidationError):
    """Sub-clips cannot be joined."""


class JobFailed(AvatarError):
    """A sub-clip job raised; carries the failing clip index."""

    def __init__(self, clip_index: int, cause: BaseException):
        super().__init__(f"sub-clip job {clip_index} failed: {cause!r}")
        self.clip_index = clip_index
        self.cause = cause


class ConditioningWarning(UserWarning):
    """Recoverable oddity in a conditioning input (clamped box, nothing frozen)."""
