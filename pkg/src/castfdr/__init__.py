"""Correlation-adjusted simultaneous testing for grouped p-values."""

from .core import (
    AdjustmentResult,
    DuplicateFeature,
    EmptyInput,
    GroupDiagnostics,
    GroupedPValueSet,
    Method,
    PValueOutOfRange,
    validate,
)
from .correlation import GroupCorrelation, clamp_mean_correlations, mean_row_correlation, pearson_group_correlation
from .pi0 import estimate_pi0_lsl
from .procedures import (
    adjusted_pvalues,
    between_group_factor,
    harmonic_factor,
    lcast_factor,
    qcast_factor,
    run_adjustment,
    step_up,
    threshold_scale,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustmentResult",
    "DuplicateFeature",
    "EmptyInput",
    "GroupCorrelation",
    "GroupDiagnostics",
    "GroupedPValueSet",
    "Method",
    "PValueOutOfRange",
    "adjusted_pvalues",
    "between_group_factor",
    "clamp_mean_correlations",
    "estimate_pi0_lsl",
    "harmonic_factor",
    "lcast_factor",
    "mean_row_correlation",
    "pearson_group_correlation",
    "qcast_factor",
    "run_adjustment",
    "step_up",
    "threshold_scale",
    "validate",
]
