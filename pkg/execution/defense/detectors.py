"""
Adversarial-example detectors.

A detector is a score function plus a threshold calibrated on normal
validation data; an input is flagged when its score is strictly above the
threshold.

Two scorers are provided:
- reconstruction error E(x) = ||x - ae(x)||_p  (p in {1, 2})
- Jensen-Shannon divergence between the classifier's temperature softmax on
  x and on ae(x)
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional

import numpy as np
from loguru import logger

from execution.data.batch import ExampleBatch
from execution.errors import CalibrationError, ConfigurationError, DetectorStateError
from execution.models.inference import forward_numpy, reconstruct, softmax_t
from execution.models.networks import Autoencoder, Classifier


PROBABILITY_FLOOR = 1e-12
LN2 = math.log(2.0)


def reconstruction_error(ae: Autoencoder, batch: ExampleBatch, p: int) -> np.ndarray:
    """
    Per-example p-norm of x - ae(x).

    Args:
        ae: autoencoder
        batch: examples to score
        p: 1 or 2

    Returns:
        float64 array [count], every value >= 0
    """
    if p not in (1, 2):
        raise ConfigurationError(f"reconstruction norm must be 1 or 2, got {p}")
    width = int(np.prod(batch.images.shape[1:]))
    diff = (reconstruct(ae, batch).astype(np.float64) - batch.images).reshape(len(batch), width)
    if p == 1:
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff ** 2).sum(axis=1))


def jensen_shannon(p: np.ndarray, q: np.ndarray, floor: float = PROBABILITY_FLOOR) -> np.ndarray:
    """
    Jensen-Shannon divergence along the last axis (natural log, so bounded by ln 2).

    Probabilities are floored before taking logs; saturated softmax outputs
    would otherwise produce 0 * log 0.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), floor, None)
    q = np.clip(np.asarray(q, dtype=np.float64), floor, None)
    m = 0.5 * (p + q)
    kl_pm = np.sum(p * np.log(p / m), axis=-1)
    kl_qm = np.sum(q * np.log(q / m), axis=-1)
    return np.clip(0.5 * kl_pm + 0.5 * kl_qm, 0.0, LN2)


@dataclass(frozen=True)
class CalibrationPolicy:
    """Target false-positive rate on normal validation data."""

    t_fp: float

    def __post_init__(self):
        if not 0.0 <= self.t_fp <= 1.0:
            raise ConfigurationError(f"t_fp must lie in [0, 1], got {self.t_fp}")


def calibrate(scores_on_validation: np.ndarray, policy: CalibrationPolicy) -> float:
    """
    Smallest validation score such that at most t_fp of the validation
    scores lie strictly above it.

    With t_fp = 0 this is the maximum score (nothing flagged); with t_fp = 1
    it is the minimum score.

    Raises:
        CalibrationError: empty or non-finite scores
    """
    scores = np.sort(np.asarray(scores_on_validation, dtype=np.float64).ravel())
    if scores.size == 0:
        raise CalibrationError("cannot calibrate on an empty score array")
    if not np.all(np.isfinite(scores)):
        raise CalibrationError("validation scores contain non-finite values")

    n = scores.size
    # Tolerance keeps e.g. 0.001 * 5000 from rounding down to 4.
    allowed = int(math.floor(policy.t_fp * n + 1e-9))
    return float(scores[max(n - 1 - allowed, 0)])


class Detector:
    """Shared calibration / flagging logic; subclasses provide `score`."""

    kind = "detector"

    def __init__(self, name: str, t_fp: float):
        self.name = name
        self.policy = CalibrationPolicy(t_fp)
        self.threshold: Optional[float] = None
        self.empirical_fpr: Optional[float] = None

    @property
    def t_fp(self) -> float:
        return self.policy.t_fp

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None

    def score(self, batch: ExampleBatch) -> np.ndarray:
        raise NotImplementedError

    def calibrate(self, validation: ExampleBatch) -> float:
        """Set the threshold from normal validation examples and record the achieved FPR."""
        if len(validation) == 0:
            raise CalibrationError(f"{self.name}: cannot calibrate on an empty validation set")
        scores = self.score(validation)
        self.threshold = calibrate(scores, self.policy)
        self.empirical_fpr = float(np.mean(scores > self.threshold))
        if not math.isfinite(self.threshold) or self.threshold < 0:
            raise CalibrationError(f"{self.name}: calibrated threshold {self.threshold} is not a finite value >= 0")

        logger.info(
            f"Calibrated {self.name}: threshold={self.threshold:.6f}, t_fp={self.t_fp}, "
            f"validation FPR={self.empirical_fpr:.4%} ({int(np.sum(scores > self.threshold))}/{len(scores)})"
        )
        return self.threshold

    def detect(self, batch: ExampleBatch) -> np.ndarray:
        """Boolean flags, True where score > threshold."""
        if self.threshold is None:
            raise DetectorStateError(f"detector '{self.name}' used before calibration")
        return self.score(batch) > self.threshold

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "name": self.name,
            "t_fp": self.t_fp,
            "threshold": self.threshold,
            "empirical_fpr": self.empirical_fpr,
        }


class ReconstructionDetector(Detector):
    """Flags inputs whose autoencoder reconstruction error is too large."""

    kind = "reconstruction"

    def __init__(self, autoencoder: Autoencoder, norm_p: int, t_fp: float, name: Optional[str] = None,
                 autoencoder_name: Optional[str] = None):
        if norm_p not in (1, 2):
            raise ConfigurationError(f"reconstruction norm must be 1 or 2, got {norm_p}")
        super().__init__(name or f"reconstruction_l{norm_p}_{autoencoder.arch}", t_fp)
        self.autoencoder = autoencoder
        self.autoencoder_name = autoencoder_name or autoencoder.arch
        self.norm_p = norm_p

    def __repr__(self):
        return f"<ReconstructionDetector(name='{self.name}', p={self.norm_p}, threshold={self.threshold})>"

    def score(self, batch: ExampleBatch) -> np.ndarray:
        return reconstruction_error(self.autoencoder, batch, self.norm_p)

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "autoencoder": self.autoencoder_name, "norm": self.norm_p}


class DivergenceDetector(Detector):
    """Flags inputs whose classification changes too much after reconstruction."""

    kind = "divergence"

    def __init__(self, autoencoder: Autoencoder, classifier: Classifier, temperature: float, t_fp: float,
                 name: Optional[str] = None, autoencoder_name: Optional[str] = None):
        if not temperature > 1:
            raise ConfigurationError(f"divergence detector temperature must be > 1, got {temperature}")
        super().__init__(name or f"divergence_T{temperature:g}_{autoencoder.arch}", t_fp)
        self.autoencoder = autoencoder
        self.autoencoder_name = autoencoder_name or autoencoder.arch
        self.classifier = classifier
        self.temperature = float(temperature)

    def __repr__(self):
        return f"<DivergenceDetector(name='{self.name}', T={self.temperature}, threshold={self.threshold})>"

    def score(self, batch: ExampleBatch) -> np.ndarray:
        return divergence_score(self, batch)

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "autoencoder": self.autoencoder_name, "temperature": self.temperature}


def divergence_score(det: DivergenceDetector, batch: ExampleBatch) -> np.ndarray:
    """JSD(softmax_T(l(x)) || softmax_T(l(ae(x)))) per example, in [0, ln 2]."""
    logits_x = forward_numpy(det.classifier, batch)
    logits_ae = forward_numpy(det.classifier, reconstruct(det.autoencoder, batch))
    return jensen_shannon(softmax_t(logits_x, det.temperature), softmax_t(logits_ae, det.temperature))


def detect(detector: Detector, batch: ExampleBatch) -> np.ndarray:
    """Flag = score > threshold."""
    return detector.detect(batch)


def detector_from_state(
    state: Mapping[str, Any],
    autoencoders: Mapping[str, Autoencoder],
    classifier: Optional[Classifier] = None,
) -> Detector:
    """
    Rebuild a calibrated detector from its serialized state.

    Args:
        state: dict produced by `Detector.to_dict`
        autoencoders: trained autoencoders by config name
        classifier: required for divergence detectors
    """
    name = state["autoencoder"]
    if name not in autoencoders:
        raise ConfigurationError(f"detector '{state['name']}' references unknown autoencoder '{name}'")

    if state["kind"] == "reconstruction":
        detector: Detector = ReconstructionDetector(
            autoencoders[name], int(state["norm"]), float(state["t_fp"]), name=state["name"], autoencoder_name=name
        )
    elif state["kind"] == "divergence":
        if classifier is None:
            raise ConfigurationError("divergence detectors need the classifier")
        detector = DivergenceDetector(
            autoencoders[name], classifier, float(state["temperature"]), float(state["t_fp"]),
            name=state["name"], autoencoder_name=name,
        )
    else:
        raise ConfigurationError(f"unknown detector kind '{state['kind']}'")

    detector.threshold = state.get("threshold")
    detector.empirical_fpr = state.get("empirical_fpr")
    return detector
