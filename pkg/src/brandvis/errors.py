"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message text.
"""


class BrandvisError(Exception):
    """Base class for all package errors."""


class DataError(BrandvisError):
    """Unreadable, malformed, or inconsistent input data."""


class ModelError(BrandvisError):
    """Model construction, checkpoint, or inference failure."""


class DetectorError(BrandvisError):
    """External detector adapter unavailable or misbehaving."""


class TrainingDivergedError(ModelError):
    """Training loss became non-finite."""
