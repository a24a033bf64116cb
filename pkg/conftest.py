"""
Shared fixtures: a tiny synthetic "blobs" dataset and small models trained
on it once per session.

Each blobs class lights up a 3x3 patch at its own position of a 14x14
grayscale image, so a small network separates the classes within a few
epochs.
"""

import numpy as np
import pytest
import torch

from execution.config import settings
from execution.data.batch import DatasetSplits, ExampleBatch
from execution.models.networks import FLATTEN, Classifier, build_autoencoder, conv, dense, max_pool
from execution.models.training import TrainingConfig, train_autoencoder, train_classifier


BLOB_SHAPE = (14, 14, 1)

TINY_CLASSIFIER_LAYERS = [conv(8), max_pool(), conv(16), max_pool(), FLATTEN, dense(32), dense(10, "linear")]


def make_blobs(count: int, seed: int, noise: float = 0.1, first_index: int = 0) -> ExampleBatch:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=count)
    images = rng.uniform(0.0, noise, size=(count, *BLOB_SHAPE)).astype(np.float32)
    for i, k in enumerate(labels):
        row, col = (k // 4) * 4 + 1, (k % 4) * 3 + 1
        images[i, row:row + 3, col:col + 3, 0] = 0.9
    return ExampleBatch(images, labels, 10, indices=np.arange(first_index, first_index + count))


def build_tiny_classifier(seed: int = 0) -> Classifier:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Classifier("tiny", TINY_CLASSIFIER_LAYERS, BLOB_SHAPE, num_classes=10)


def pytest_collection_modifyitems(config, items):
    if settings.data_dir:
        return
    skip = pytest.mark.skip(reason="set MAGNET_DATA_DIR to the raw dataset files to run real-data tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def blob_splits() -> DatasetSplits:
    return DatasetSplits(
        name="blobs",
        train=make_blobs(600, seed=1),
        validation=make_blobs(300, seed=2, first_index=600),
        test=make_blobs(200, seed=3),
        num_classes=10,
    )


@pytest.fixture(scope="session")
def trained_classifier(blob_splits):
    model = build_tiny_classifier(seed=0)
    cfg = TrainingConfig(optimizer="adam", learning_rate=0.003, batch_size=32, epochs=5, seed=0)
    return train_classifier(model, blob_splits, cfg)


@pytest.fixture(scope="session")
def trained_autoencoder(blob_splits):
    ae = build_autoencoder("mnist_II", input_shape=BLOB_SHAPE, seed=0)
    cfg = TrainingConfig(optimizer="adam", learning_rate=0.01, batch_size=32, epochs=5, seed=0)
    return train_autoencoder(ae, blob_splits, cfg)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
