"""Reject inference for credit-acceptance scorecards."""

__version__ = "0.1.0"

from .dataset import (  # noqa: E402
    Dataset, GLOBAL_AUDIT, MaskedOutcomeError, generate_synthetic, load_csv, simulate_rejection,
    split,
)
from .metrics import default_rate_among_accepted, global_indicators, ks_statistic, roc_auc  # noqa: E402
from .reject_inference import (  # noqa: E402
    Augmentation, ControlGroup, Extrapolation, Parcelling, Reclassification, sample_control_group,
)
from .scoring import RidgeLogisticRegression, Scorecard, ScorecardEncoder, ScoreModel  # noqa: E402

__all__ = [
    "Dataset", "GLOBAL_AUDIT", "MaskedOutcomeError", "generate_synthetic", "load_csv",
    "simulate_rejection", "split", "roc_auc", "ks_statistic", "global_indicators",
    "default_rate_among_accepted", "Extrapolation", "Reclassification", "Augmentation",
    "Parcelling", "ControlGroup", "sample_control_group", "RidgeLogisticRegression",
    "Scorecard", "ScorecardEncoder", "ScoreModel",
]
