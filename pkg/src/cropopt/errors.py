"""Exception hierarchy for the crop optimizer.

Everything raised on purpose by this package derives from CropOptError, so
callers can catch one type at the boundary. OS-level problems (missing files,
broken pipes) are deliberately left as their builtin types.
"""

from __future__ import annotations


class CropOptError(Exception):
    """Base class for all errors raised by cropopt."""


class ImageFormatError(CropOptError):
    """The bytes on disk are not a supported image encoding."""


class DegenerateSizeError(CropOptError):
    """An operation would produce an image smaller than 2x2."""


class EmptyCaptionError(CropOptError):
    """No caption word survived tokenization against the vocabulary."""


class VocabularyError(CropOptError):
    """Malformed vocabulary, or two sides disagree about its contents."""


class NumericError(CropOptError):
    """A non-finite value appeared where the math requires finite numbers.

    Carries the evaluation point when one is known, so solver blowups can be
    reproduced.
    """

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class ScorerError(CropOptError):
    """A scorer failed to produce a usable result."""


class ProtocolError(ScorerError):
    """A wire message violated the crop-scorer protocol."""


class DesyncError(ProtocolError):
    """Response ids no longer match request ids; the connection is unusable."""


class IncompatibleScorerError(ScorerError):
    """The remote scorer speaks a different protocol version."""


class ScorerTimeoutError(ScorerError):
    """The remote scorer did not answer within the allowed time."""


class PipelineError(CropOptError):
    """The optimization run aborted; carries whatever progress was made.

    ``partial_run`` is a CropRun built from the scales completed before the
    failure (possibly with no finished scale at all), or None when the run
    died before producing anything.
    """

    def __init__(self, message: str, partial_run=None):
        super().__init__(message)
        self.partial_run = partial_run
