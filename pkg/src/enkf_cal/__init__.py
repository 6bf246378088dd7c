"""Ensemble Kalman filter tools for computer-model calibration."""

from enkf_cal._linalg import InsufficientEnsembleError, NumericalError, ValidationError
from enkf_cal.ensemble import (
    JointEnsemble,
    MomentEstimate,
    ObservationModel,
    build_incidence,
    compute_moments,
    load_tabulated_ensemble,
    partition,
    save_ensemble,
)
from enkf_cal.update import (
    GaussianPosterior,
    StageSchedule,
    UpdatedEnsemble,
    ensemble_update,
    gaussian_update,
    multistage_gaussian,
    multistage_update,
    precision_form_update,
)

__all__ = [
    "GaussianPosterior",
    "InsufficientEnsembleError",
    "JointEnsemble",
    "MomentEstimate",
    "NumericalError",
    "ObservationModel",
    "StageSchedule",
    "UpdatedEnsemble",
    "ValidationError",
    "build_incidence",
    "compute_moments",
    "ensemble_update",
    "gaussian_update",
    "load_tabulated_ensemble",
    "multistage_gaussian",
    "multistage_update",
    "partition",
    "precision_form_update",
    "save_ensemble",
]
__version__ = "0.1.0"
