"""Brand visibility analytics.

Predicts where viewers look on packaging designs (text-aware saliency) and
scores how much of that attention lands on brand elements.
"""

__version__ = "0.1.0"

from .errors import (
    BrandvisError,
    DataError,
    DetectorError,
    ModelError,
    TrainingDivergedError,
)

__all__ = [
    "BrandvisError",
    "DataError",
    "DetectorError",
    "ModelError",
    "TrainingDivergedError",
    "__version__",
]
