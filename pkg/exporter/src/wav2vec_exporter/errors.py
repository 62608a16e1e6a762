class ExporterError(Exception):
    """Base class for exporter failures."""


class InputNotCanonical(ExporterError):
    """Input is not 16 kHz mono 16-bit PCM; refused rather than resampled."""


class ModelLoadFailure(ExporterError):
    """The requested speech model could not be constructed."""
