"""
Tests for the detector scores, threshold calibration and detector state.

Run with: pytest execution/defense/test_detectors.py -v
"""

import math

import numpy as np
import pytest
import torch
from torch import nn

from execution.data.batch import ExampleBatch
from execution.defense import (
    CalibrationPolicy,
    DivergenceDetector,
    ReconstructionDetector,
    calibrate,
    detector_from_state,
    jensen_shannon,
    reconstruction_error,
)
from execution.errors import CalibrationError, ConfigurationError, DetectorStateError


LN2 = math.log(2.0)


def _entropy(p: np.ndarray) -> float:
    return float(-np.sum(p * np.log(p)))


class ShiftAutoencoder(nn.Module):
    """ae(x) = x + shift on 28x28 grayscale images."""

    arch = "shift"
    input_shape = (28, 28, 1)

    def __init__(self, shift: float):
        super().__init__()
        self.shift = nn.Parameter(torch.tensor(shift, dtype=torch.float64), requires_grad=False)

    def forward(self, x):
        return x + self.shift


def _gray_batch(count: int, value: float = 0.5) -> ExampleBatch:
    return ExampleBatch(np.full((count, 28, 28, 1), value), np.zeros(count, dtype=np.int64), 10)


# ==================== Jensen-Shannon divergence ====================

class TestJensenShannon:

    def test_bounds_and_symmetry_on_random_pairs(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(10), size=1000)
        q = rng.dirichlet(np.ones(10), size=1000)

        forward, backward = jensen_shannon(p, q), jensen_shannon(q, p)
        assert np.all(forward >= 0.0)
        assert np.all(forward <= LN2)
        assert np.allclose(forward, backward, rtol=0, atol=1e-12)

    def test_identical_distributions(self):
        p = np.random.default_rng(1).dirichlet(np.ones(10), size=20)
        assert np.all(np.abs(jensen_shannon(p, p)) < 1e-12)

    def test_disjoint_supports_reach_ln2(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.0, 1.0])
        assert abs(float(jensen_shannon(p, q)) - LN2) < 1e-9

    @pytest.mark.parametrize("a,b", [(0.5, 0.5), (0.9, 0.1), (0.3, 0.6), (0.99, 0.5)])
    def test_two_class_closed_form(self, a, b):
        p, q = np.array([a, 1 - a]), np.array([b, 1 - b])
        m = 0.5 * (p + q)
        expected = _entropy(m) - 0.5 * (_entropy(p) + _entropy(q))
        assert float(jensen_shannon(p, q)) == pytest.approx(expected, abs=1e-12)


# ==================== Calibration ====================

def _brute_force_threshold(scores: np.ndarray, t_fp: float) -> float:
    allowed = math.floor(t_fp * len(scores) + 1e-9)
    return min(s for s in scores if np.sum(scores > s) <= allowed)


class TestCalibrate:

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 120))
            # rounding produces ties
            scores = np.round(rng.exponential(size=n), 2)
            t_fp = float(rng.choice([0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0, rng.uniform()]))
            assert calibrate(scores, CalibrationPolicy(t_fp)) == _brute_force_threshold(scores, t_fp)

    def test_flagged_fraction_never_exceeds_target(self):
        scores = np.random.default_rng(3).normal(size=5000)
        threshold = calibrate(scores, CalibrationPolicy(0.001))
        assert np.sum(scores > threshold) == 5

    def test_extreme_targets(self):
        scores = np.array([0.3, 0.1, 0.7, 0.2])
        assert calibrate(scores, CalibrationPolicy(0.0)) == 0.7
        assert calibrate(scores, CalibrationPolicy(1.0)) == 0.1

    def test_unusable_scores(self):
        with pytest.raises(CalibrationError):
            calibrate(np.array([]), CalibrationPolicy(0.1))
        with pytest.raises(CalibrationError):
            calibrate(np.array([0.1, np.nan]), CalibrationPolicy(0.1))

    def test_threshold_rises_as_target_falls(self):
        scores = np.random.default_rng(4).exponential(size=2000)
        targets = [1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0]
        thresholds = [calibrate(scores, CalibrationPolicy(t)) for t in targets]
        assert thresholds == sorted(thresholds)

    def test_policy_range(self):
        with pytest.raises(ConfigurationError):
            CalibrationPolicy(1.5)
        with pytest.raises(ConfigurationError):
            CalibrationPolicy(-0.1)


# ==================== Detectors on trained models ====================

class TestReconstructionDetector:

    def test_identity_autoencoder_scores_zero(self):
        batch = _gray_batch(3)
        assert np.array_equal(reconstruction_error(ShiftAutoencoder(0.0), batch, 1), np.zeros(3))
        assert np.array_equal(reconstruction_error(ShiftAutoencoder(0.0), batch, 2), np.zeros(3))

    def test_uniform_shift_over_784_pixels(self):
        batch = _gray_batch(2)
        assert reconstruction_error(ShiftAutoencoder(0.1), batch, 1) == pytest.approx([78.4, 78.4], rel=1e-6)
        assert reconstruction_error(ShiftAutoencoder(0.1), batch, 2) == pytest.approx([2.8, 2.8], rel=1e-6)

    def test_empty_batch(self, trained_autoencoder, blob_splits):
        empty = blob_splits.validation.take(0)
        assert reconstruction_error(trained_autoencoder, empty, 2).shape == (0,)
        with pytest.raises(CalibrationError):
            ReconstructionDetector(trained_autoencoder, 2, t_fp=0.01).calibrate(empty)


    def test_scores_are_norms(self, trained_autoencoder, blob_splits):
        batch = blob_splits.validation.take(50)
        l1 = reconstruction_error(trained_autoencoder, batch, 1)
        l2 = reconstruction_error(trained_autoencoder, batch, 2)
        assert np.all(l2 >= 0.0)
        assert np.all(l1 >= l2 - 1e-9)

    def test_calibrated_fpr(self, trained_autoencoder, blob_splits):
        detector = ReconstructionDetector(trained_autoencoder, 2, t_fp=0.05)
        detector.calibrate(blob_splits.validation)
        assert detector.calibrated
        assert detector.empirical_fpr <= 0.05
        assert np.mean(detector.detect(blob_splits.validation)) <= 0.05

    def test_noise_scores_above_normal(self, trained_autoencoder, blob_splits):
        detector = ReconstructionDetector(trained_autoencoder, 2, t_fp=0.01)
        noise = blob_splits.validation.with_images(
            np.random.default_rng(0).uniform(size=blob_splits.validation.images.shape)
        )
        assert detector.score(noise).mean() > detector.score(blob_splits.validation).mean()

    def test_use_before_calibration(self, trained_autoencoder, blob_splits):
        detector = ReconstructionDetector(trained_autoencoder, 1, t_fp=0.01)
        with pytest.raises(DetectorStateError):
            detector.detect(blob_splits.test)

    def test_norm_must_be_1_or_2(self, trained_autoencoder):
        with pytest.raises(ConfigurationError):
            ReconstructionDetector(trained_autoencoder, 3, t_fp=0.01)


class TestDivergenceDetector:

    def test_scores_within_bounds(self, trained_autoencoder, trained_classifier, blob_splits):
        detector = DivergenceDetector(trained_autoencoder, trained_classifier, temperature=10.0, t_fp=0.01)
        scores = detector.score(blob_splits.validation.take(100))
        assert scores.shape == (100,)
        assert np.all((scores >= 0.0) & (scores <= LN2))

    def test_empty_batch(self, trained_autoencoder, trained_classifier, blob_splits):
        detector = DivergenceDetector(trained_autoencoder, trained_classifier, temperature=10.0, t_fp=0.01)
        assert detector.score(blob_splits.validation.take(0)).shape == (0,)

    def test_temperature_must_exceed_one(self, trained_autoencoder, trained_classifier):
        with pytest.raises(ConfigurationError):
            DivergenceDetector(trained_autoencoder, trained_classifier, temperature=1.0, t_fp=0.01)


class TestDetectorState:

    def test_state_round_trip(self, trained_autoencoder, trained_classifier, blob_splits):
        original = DivergenceDetector(
            trained_autoencoder, trained_classifier, temperature=40.0, t_fp=0.05, autoencoder_name="ae"
        )
        original.calibrate(blob_splits.validation)

        rebuilt = detector_from_state(original.to_dict(), {"ae": trained_autoencoder}, trained_classifier)
        assert rebuilt.threshold == original.threshold
        assert rebuilt.name == original.name
        assert np.array_equal(rebuilt.detect(blob_splits.test), original.detect(blob_splits.test))

    def test_unknown_autoencoder(self, trained_autoencoder):
        state = ReconstructionDetector(trained_autoencoder, 1, 0.01, autoencoder_name="ae").to_dict()
        with pytest.raises(ConfigurationError):
            detector_from_state(state, {"other": trained_autoencoder})

    def test_divergence_needs_classifier(self, trained_autoencoder, trained_classifier):
        state = DivergenceDetector(trained_autoencoder, trained_classifier, 10.0, 0.01, autoencoder_name="ae").to_dict()
        with pytest.raises(ConfigurationError):
            detector_from_state(state, {"ae": trained_autoencoder})
