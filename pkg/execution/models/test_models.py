"""
Tests for network construction, inference helpers, training and archives.

Run with: pytest execution/models/test_models.py -v
"""

import json
import zipfile

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from conftest import BLOB_SHAPE, build_tiny_classifier
from execution.errors import ConfigurationError, InputShapeError, SerializationError, TrainingError
from execution.models import (
    accuracy,
    build_autoencoder,
    build_classifier,
    carlini_objective,
    classify,
    fingerprint,
    input_gradient,
    load_model,
    reconstruct,
    save_model,
    softmax_t,
)
from execution.models.inference import forward_numpy
from execution.models.networks import FLATTEN, Classifier, dense
from execution.models.training import TrainingConfig, _run_epochs, reconstruction_mse, train_classifier


# ==================== Construction ====================

class TestBuildNetworks:

    @pytest.mark.parametrize("arch,shape", [("mnist", (28, 28, 1)), ("cifar10", (32, 32, 3))])
    def test_classifier_emits_logits(self, arch, shape):
        model = build_classifier(arch, seed=0)
        logits = forward_numpy(model, np.zeros((2, *shape), dtype=np.float32))
        assert logits.shape == (2, 10)

    @pytest.mark.parametrize("arch", ["mnist_I", "mnist_II", "cifar", "diverse"])
    def test_autoencoder_keeps_shape_and_range(self, arch):
        ae = build_autoencoder(arch, seed=0)
        x = np.random.default_rng(0).uniform(size=(3, *ae.input_shape)).astype(np.float32)
        out = reconstruct(ae, x)
        assert out.shape == x.shape
        assert 0.0 <= out.min() and out.max() <= 1.0

    def test_seed_fixes_initial_weights(self):
        first = build_autoencoder("mnist_I", seed=7)
        second = build_autoencoder("mnist_I", seed=7)
        for a, b in zip(first.parameters(), second.parameters()):
            assert torch.equal(a, b)

    def test_unknown_arch(self):
        with pytest.raises(ConfigurationError):
            build_classifier("resnet")
        with pytest.raises(ConfigurationError):
            build_autoencoder("mnist_III")

    def test_wrong_input_shape(self):
        model = build_classifier("mnist", seed=0)
        with pytest.raises(InputShapeError):
            forward_numpy(model, np.zeros((1, 32, 32, 3), dtype=np.float32))


# ==================== Inference helpers ====================

class TestEmptyBatches:

    def test_classify_keeps_class_axis(self, trained_classifier, blob_splits):
        logits, probabilities, labels = classify(trained_classifier, blob_splits.test.take(0))
        assert logits.shape == (0, 10)
        assert probabilities.shape == (0, 10)
        assert labels.shape == (0,)

    def test_reconstruct_keeps_image_shape(self, trained_autoencoder, blob_splits):
        assert reconstruct(trained_autoencoder, blob_splits.test.take(0)).shape == (0, *BLOB_SHAPE)


class TestSoftmaxT:

    def test_rows_sum_to_one_and_argmax_is_stable(self):
        logits = np.random.default_rng(0).normal(scale=5.0, size=(50, 10))
        for temperature in (1.0, 10.0, 40.0):
            probs = softmax_t(logits, temperature)
            assert np.allclose(probs.sum(axis=1), 1.0)
            assert np.array_equal(probs.argmax(axis=1), logits.argmax(axis=1))

    def test_higher_temperature_flattens(self):
        logits = np.array([[4.0, 1.0, 0.0]])
        assert softmax_t(logits, 10.0).max() < softmax_t(logits, 1.0).max()

    def test_rejects_non_positive_temperature(self):
        with pytest.raises(ConfigurationError):
            softmax_t(np.zeros((1, 3)), 0.0)


class TestCarliniObjective:

    def test_margin_and_clamp(self):
        logits = torch.tensor([[2.0, 1.0, 0.0], [2.0, 1.0, 0.0]])
        labels = torch.tensor([0, 2])
        assert carlini_objective(logits, labels, kappa=0.0).tolist() == [1.0, 0.0]
        assert carlini_objective(logits, labels, kappa=5.0).tolist() == [1.0, -2.0]


def _toy_network(seed: int) -> Classifier:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = Classifier("toy", [FLATTEN, dense(6, "sigmoid"), dense(3, "linear")], (2, 2, 1), num_classes=3)
    return model.double()


def _cross_entropy(model, images, labels):
    logits = forward_numpy(model, images)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(len(labels)), labels].sum()


class TestInputGradient:

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_differences(self, seed):
        model = _toy_network(seed)
        rng = np.random.default_rng(seed)
        images = rng.uniform(size=(3, 2, 2, 1))
        labels = rng.integers(0, 3, size=3)

        grad = input_gradient(model, images, labels)

        h = 1e-6
        numeric = np.zeros_like(images)
        for index in np.ndindex(images.shape):
            up, down = images.copy(), images.copy()
            up[index] += h
            down[index] -= h
            numeric[index] = (_cross_entropy(model, up, labels) - _cross_entropy(model, down, labels)) / (2 * h)

        relative = np.abs(grad - numeric) / np.maximum(np.abs(numeric), 1e-3)
        assert relative.max() <= 1e-4

    def test_gradient_has_input_shape(self, trained_classifier, blob_splits):
        batch = blob_splits.test.take(4)
        grad = input_gradient(trained_classifier, batch, loss="carlini", kappa=2.0)
        assert grad.shape == batch.images.shape

    def test_unknown_loss(self, trained_classifier, blob_splits):
        with pytest.raises(ConfigurationError):
            input_gradient(trained_classifier, blob_splits.test.take(2), loss="hinge")

    def test_raw_arrays_need_labels(self, trained_classifier, blob_splits):
        with pytest.raises(ConfigurationError):
            input_gradient(trained_classifier, blob_splits.test.images[:2])


# ==================== Training ====================

class TestTraining:

    def test_classifier_learns_blobs(self, trained_classifier, blob_splits):
        assert accuracy(trained_classifier, blob_splits.test) > 0.9
        assert trained_classifier.training_log[-1]["final_test_accuracy"] > 0.9
        assert len(trained_classifier.training_log) == 6

    def test_autoencoder_improves_on_untrained(self, trained_autoencoder, blob_splits):
        untrained = build_autoencoder("mnist_II", input_shape=BLOB_SHAPE, seed=0)
        assert reconstruction_mse(trained_autoencoder, blob_splits.validation) < reconstruction_mse(untrained, blob_splits.validation)

    def test_config_rejects_bad_values(self):
        with pytest.raises(ValidationError):
            TrainingConfig(learning_rate=-1.0)
        with pytest.raises(ValidationError):
            TrainingConfig(optimizer="rmsprop")
        with pytest.raises(ValidationError):
            TrainingConfig(epoch=3)

    def test_non_finite_loss_reports_epoch(self, blob_splits):
        model = build_tiny_classifier(seed=1)
        cfg = TrainingConfig(optimizer="sgd", learning_rate=0.01, batch_size=64, epochs=2)

        def nan_loss(x, _y, _gen):
            return model(x).sum() * float("nan")

        with pytest.raises(TrainingError) as info:
            _run_epochs(model, blob_splits.train, cfg, nan_loss, lambda: {}, "nan")
        assert info.value.epoch == 1

    def test_incompatible_dataset(self, blob_splits):
        with pytest.raises(InputShapeError):
            train_classifier(build_classifier("cifar10", seed=0), blob_splits, TrainingConfig(epochs=1))


# ==================== Archives ====================

class TestArchive:

    def test_round_trip_preserves_outputs(self, trained_classifier, blob_splits, tmp_path):
        path = save_model(trained_classifier, tmp_path / "c.magnet")
        loaded = load_model(path, expected_arch="tiny", expected_kind="classifier")

        batch = blob_splits.test.take(16)
        assert np.array_equal(forward_numpy(loaded, batch), forward_numpy(trained_classifier, batch))
        assert loaded.training_log == trained_classifier.training_log

    def test_same_weights_same_bytes(self, trained_autoencoder, tmp_path):
        first = save_model(trained_autoencoder, tmp_path / "a.magnet")
        second = save_model(trained_autoencoder, tmp_path / "b.magnet")
        assert fingerprint(first) == fingerprint(second)

    def test_arch_and_kind_mismatch(self, trained_autoencoder, tmp_path):
        path = save_model(trained_autoencoder, tmp_path / "a.magnet")
        with pytest.raises(SerializationError, match="arch"):
            load_model(path, expected_arch="mnist_I")
        with pytest.raises(SerializationError):
            load_model(path, expected_kind="classifier")

    def test_missing_and_corrupt_archives(self, tmp_path):
        with pytest.raises(SerializationError):
            load_model(tmp_path / "nothing.magnet")
        garbage = tmp_path / "garbage.magnet"
        garbage.write_bytes(b"not a zip")
        with pytest.raises(SerializationError):
            load_model(garbage)

    def test_format_version_is_checked(self, tmp_path):
        path = tmp_path / "future.magnet"
        with zipfile.ZipFile(path, "w") as archive:
            archive.writestr("metadata.json", json.dumps({"format_version": 99, "kind": "classifier", "arch": "x"}))
        with pytest.raises(SerializationError, match="version"):
            load_model(path)
