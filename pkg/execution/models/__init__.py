"""
Classifier and autoencoder definitions, training, inference and archives.
"""

from .networks import (
    LayerSpec,
    Classifier,
    Autoencoder,
    build_classifier,
    build_autoencoder,
    CLASSIFIER_ARCHITECTURES,
    AUTOENCODER_INPUT_SHAPES,
)
from .inference import classify, accuracy, input_gradient, reconstruct, softmax_t, carlini_objective
from .training import TrainingConfig, train_classifier, train_autoencoder, reconstruction_mse
from .archive import save_model, load_model, fingerprint, read_metadata

__all__ = [
    "LayerSpec",
    "Classifier",
    "Autoencoder",
    "build_classifier",
    "build_autoencoder",
    "CLASSIFIER_ARCHITECTURES",
    "AUTOENCODER_INPUT_SHAPES",
    "classify",
    "accuracy",
    "input_gradient",
    "reconstruct",
    "softmax_t",
    "carlini_objective",
    "TrainingConfig",
    "train_classifier",
    "train_autoencoder",
    "reconstruction_mse",
    "save_model",
    "load_model",
    "fingerprint",
    "read_metadata",
]
