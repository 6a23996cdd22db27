"""Glide-time symmetric non-Hermitian double SSH chain."""

from .errors import (
    AccuracyWarning,
    ClassificationAmbiguous,
    DegeneracyWarning,
    InvalidArgument,
    NumericalFailure,
    UnsupportedBipolar,
)
from .model import (
    ModelParams,
    build_bloch,
    build_non_bloch,
    build_real_space,
    symmetry_residuals,
)

__version__ = "0.1.0"
