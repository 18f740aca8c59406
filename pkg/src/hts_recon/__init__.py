"""Coherent point-forecast reconciliation for hierarchical time series."""

__version__ = "0.1.0"

from .covariance import (  # noqa: E402
    CovarianceEstimate,
    diagonal_covariance,
    identity_scaled,
    pseudo_inverse,
    sample_covariance,
    shrink_covariance,
    shrinkage_intensity,
    user_supplied,
)
from .hierarchy import (  # noqa: E402
    HierarchySpec,
    ObservationPanel,
    SummingMatrix,
    build_summing_matrix,
    figure1_hierarchy,
    one_level,
    two_level,
    validate_coherence,
)
from .reconcile import (  # noqa: E402
    ReconciliationMap,
    TrainingPanel,
    apply,
    g_bottom_up,
    g_emint_u,
    g_erm,
    g_gls,
    g_mint,
    g_ols,
    g_wls,
)

__all__ = [
    "CovarianceEstimate", "HierarchySpec", "ObservationPanel", "ReconciliationMap", "SummingMatrix",
    "TrainingPanel", "apply", "build_summing_matrix", "diagonal_covariance", "figure1_hierarchy",
    "g_bottom_up", "g_emint_u", "g_erm", "g_gls", "g_mint", "g_ols", "g_wls", "identity_scaled", "one_level",
    "pseudo_inverse", "sample_covariance", "shrink_covariance", "shrinkage_intensity", "two_level",
    "user_supplied", "validate_coherence",
]
