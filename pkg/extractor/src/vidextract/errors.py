"""Exception types for the extraction adapter.

The CLI maps these onto exit codes: usage problems exit 1, job problems
(unreadable inputs, bad data) exit 2, setup problems (missing pretrained
weights) exit 3.
"""


class ExtractError(Exception):
    """Base class for every error raised by this package."""


class JobError(ExtractError):
    """An input video, audio track, or output target cannot be processed."""


class SetupError(ExtractError):
    """Pretrained weights are unavailable and no fallback was requested."""
