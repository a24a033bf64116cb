"""
Detectors, reformers, diversity ensembles and the assembled defense pipeline.
"""

from .detectors import (
    CalibrationPolicy,
    Detector,
    ReconstructionDetector,
    DivergenceDetector,
    calibrate,
    detect,
    detector_from_state,
    divergence_score,
    jensen_shannon,
    reconstruction_error,
)
from .reformer import Reformer, reform
from .diversity import (
    Ensemble,
    diversity_loss,
    train_diverse_ensemble,
    pick_random,
    pick_random_per_example,
    reform_with_ensemble,
    ensemble_normal_accuracy,
    save_ensemble,
    load_ensemble,
)
from .pipeline import (
    REJECT,
    DefensePipeline,
    EvaluationReport,
    GrayboxMatrix,
    ReformedClassifier,
    magnet_decide,
    correct_decision,
    correct_decisions,
    evaluate,
    graybox_matrix,
    confidence_sweep,
)

__all__ = [
    "CalibrationPolicy",
    "Detector",
    "ReconstructionDetector",
    "DivergenceDetector",
    "calibrate",
    "detect",
    "detector_from_state",
    "divergence_score",
    "jensen_shannon",
    "reconstruction_error",
    "Reformer",
    "reform",
    "Ensemble",
    "diversity_loss",
    "train_diverse_ensemble",
    "pick_random",
    "pick_random_per_example",
    "reform_with_ensemble",
    "ensemble_normal_accuracy",
    "save_ensemble",
    "load_ensemble",
    "REJECT",
    "DefensePipeline",
    "EvaluationReport",
    "GrayboxMatrix",
    "ReformedClassifier",
    "magnet_decide",
    "correct_decision",
    "correct_decisions",
    "evaluate",
    "graybox_matrix",
    "confidence_sweep",
]
