"""Exception taxonomy shared across the toolkit.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented process exit codes: 2 usage, 3 data error, 4 numeric divergence,
5 I/O.
"""


class ApesedError(Exception):
    exit_code = 1


class DataError(ApesedError):
    """Input content is present but invalid or inconsistent."""

    exit_code = 3


class IOError_(ApesedError):
    """A required file is missing or unreadable."""

    exit_code = 5


# audio_ingest
class UnsupportedFormat(DataError):
    pass


class CorruptFile(DataError):
    pass


class EmptyAudio(DataError):
    pass


# featurize / file formats
class BadMagic(DataError):
    pass


class FormatError(DataError):
    pass


class DimMismatch(DataError):
    pass


class FrameCountMismatch(DataError):
    pass


# annotations
class ParseError(DataError):
    pass


class NegativeSpan(DataError):
    pass


class OverlapError(DataError):
    pass


class SpanPastEnd(DataError):
    pass


# dataset
class TooFewClips(DataError):
    pass


class MissingFile(IOError_):
    pass


class AlignmentError(DataError):
    pass


# neural / training
class BadConfig(DataError):
    pass


class DivergenceError(ApesedError):
    exit_code = 4


class EmptySplit(DataError):
    pass


class IncompatibleCheckpoint(DataError):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class NoPositives(DataError):
    pass


# transfer
class FeatureKindMismatch(DataError):
    pass


class ClassArityMismatch(DataError):
    pass
