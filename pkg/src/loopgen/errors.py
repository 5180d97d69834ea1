"""Exception and warning types shared across the package."""


class LoopgenError(Exception):
    """Base class for all package errors."""


class ConfigError(LoopgenError):
    """Invalid configuration: bad value, missing input, mismatched setup."""


class InputError(LoopgenError):
    """A runtime input violates a precondition (non-finite, wrong domain)."""


class ShapeError(LoopgenError):
    """An array has the wrong shape for the operation."""


class NoBeats(LoopgenError):
    """Beat grid is empty; segmentation is impossible."""


class SegmentTooShort(LoopgenError):
    """An inter-downbeat interval is below the minimum usable duration."""


class TooFewClips(LoopgenError):
    """Requested corpus is too small to cover every class."""


class NumericalError(LoopgenError):
    """A numerical routine left its validity envelope (e.g. an eigenvalue
    far below zero where a PSD matrix was required)."""


class TrainingDiverged(LoopgenError):
    """Training hit a non-finite loss.

    Carries the last good state so callers can roll back instead of losing
    the run.
    """

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


class ExtremeStretch(UserWarning):
    """Time-stretch ratio outside [0.5, 2.0]; output quality degrades."""
