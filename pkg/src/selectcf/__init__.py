"""Counterfactual prediction under selective confounding."""
from .core import (
    Aggregate,
    FittedPredictor,
    GenConfig,
    Learner,
    LinearModel,
    LogitModel,
    ObservedSample,
    Study,
    Treatment,
    TruthRecord,
    mask_selective,
    predict,
    read_study,
    write_study,
)
from .evaluation import (
    dr_mse_estimate,
    holdout_location_mse,
    location_stats,
    mse_vs_truth,
    policy_swap_fr,
)
from .learners import estimate_dual_labels, fit_dr, fit_learner, fit_ra, fit_sp
from .synthgen import generate_study

__version__ = "0.1.0"
