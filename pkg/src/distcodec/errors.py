"""Exception classes shared across the package."""


class CodecError(Exception):
    """Base class for all errors raised by distcodec."""


class OutOfSupport(CodecError):
    """A value lies outside the histogram support."""


class EmptyChannel(CodecError):
    """A histogram was requested for a channel with no samples."""


class TooManyBins(CodecError):
    """The bin count cannot be represented at the coder precision."""


class CorruptStream(CodecError):
    """A byte stream is truncated or malformed."""


class SpecMismatch(CodecError):
    """Two objects disagree on their bin grid, channel count or shape."""


class BadShape(CodecError):
    """A tensor shape violates a layer's divisibility constraints."""


class Diverged(CodecError):
    """Training produced a non-finite loss.

    ``snapshot`` holds a copy of the parameters taken before the failing step.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
