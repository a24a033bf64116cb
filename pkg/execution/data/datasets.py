"""
Dataset loading and splitting.

Splits are drawn from the raw files after a seeded shuffle:
- train and validation come from the training file(s), disjoint by construction
- test comes from the test file (a seeded subset when fewer examples are requested)
"""

from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from execution.data.batch import DatasetSplits, ExampleBatch
from execution.data.readers import read_cifar_batch, read_idx_images, read_idx_labels, verify_checksum
from execution.errors import ConfigurationError, DatasetLoadError, DatasetSizeError


SUPPORTED_DATASETS = ("mnist", "cifar10")

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

# Offset keeping the test shuffle independent of the train/validation shuffle.
TEST_SHUFFLE_OFFSET = 7919


def _locate(source_dir: Path, name: str) -> Path:
    """Find a raw file, accepting a .gz variant and the CIFAR archive subdirectory."""
    candidates = [
        source_dir / name,
        source_dir / f"{name}.gz",
        source_dir / "cifar-10-batches-bin" / name,
    ]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    raise DatasetLoadError(str(source_dir / name), "file not found")


def _check(path: Path, checksums: Dict[str, str]) -> Path:
    verify_checksum(path, checksums.get(path.name))
    return path


def _read_mnist(source_dir: Path, checksums: Dict[str, str]):
    paths = {key: _check(_locate(source_dir, name), checksums) for key, name in MNIST_FILES.items()}

    train_x = read_idx_images(paths["train_images"])
    train_y = read_idx_labels(paths["train_labels"])
    test_x = read_idx_images(paths["test_images"])
    test_y = read_idx_labels(paths["test_labels"])

    if len(train_x) != len(train_y):
        raise DatasetLoadError(str(paths["train_labels"]), "label count differs from image count")
    if len(test_x) != len(test_y):
        raise DatasetLoadError(str(paths["test_labels"]), "label count differs from image count")

    return train_x, train_y, test_x, test_y


def _read_cifar(source_dir: Path, checksums: Dict[str, str]):
    images, labels = [], []
    for name in CIFAR_TRAIN_FILES:
        x, y = read_cifar_batch(_check(_locate(source_dir, name), checksums))
        images.append(x)
        labels.append(y)

    test_x, test_y = read_cifar_batch(_check(_locate(source_dir, CIFAR_TEST_FILE), checksums))
    return np.concatenate(images), np.concatenate(labels), test_x, test_y


def _to_batch(images: np.ndarray, labels: np.ndarray, indices: np.ndarray, num_classes: int) -> ExampleBatch:
    return ExampleBatch(
        images=images[indices].astype(np.float32) / 255.0,
        labels=labels[indices],
        num_classes=num_classes,
        indices=indices,
    )


def load_dataset(
    name: str,
    source_dir: Path,
    split_sizes: Tuple[int, int, int],
    seed: int = 0,
    checksums: Optional[Dict[str, str]] = None,
) -> DatasetSplits:
    """
    Load a dataset and cut it into train / validation / test splits.

    Args:
        name: 'mnist' or 'cifar10'
        source_dir: directory holding the raw files
        split_sizes: (train, validation, test) example counts
        seed: shuffle seed; the same seed yields byte-identical splits
        checksums: optional {file name: sha256} digests to verify

    Returns:
        DatasetSplits with pixel values scaled to [0, 1]

    Raises:
        ConfigurationError: unknown dataset name
        DatasetLoadError: missing or corrupt file (names the file)
        DatasetSizeError: requested sizes exceed what the files hold
    """
    name = name.lower()
    if name not in SUPPORTED_DATASETS:
        raise ConfigurationError(f"unknown dataset '{name}', expected one of {SUPPORTED_DATASETS}")

    source_dir = Path(source_dir)
    checksums = checksums or {}
    n_train, n_val, n_test = (int(s) for s in split_sizes)
    if min(n_train, n_val, n_test) < 0:
        raise DatasetSizeError(f"split sizes must be non-negative, got {split_sizes}")

    logger.info(f"Loading {name} from {source_dir} (sizes={split_sizes}, seed={seed})")

    if name == "mnist":
        train_x, train_y, test_x, test_y = _read_mnist(source_dir, checksums)
    else:
        train_x, train_y, test_x, test_y = _read_cifar(source_dir, checksums)

    if n_train + n_val > len(train_x):
        raise DatasetSizeError(
            f"train + validation = {n_train + n_val} exceeds the {len(train_x)} training examples available"
        )
    if n_test > len(test_x):
        raise DatasetSizeError(f"test size {n_test} exceeds the {len(test_x)} test examples available")

    order = np.random.default_rng(seed).permutation(len(train_x))
    test_order = np.random.default_rng(seed + TEST_SHUFFLE_OFFSET).permutation(len(test_x))

    splits = DatasetSplits(
        name=name,
        train=_to_batch(train_x, train_y, np.sort(order[:n_train]), 10),
        validation=_to_batch(train_x, train_y, np.sort(order[n_train:n_train + n_val]), 10),
        test=_to_batch(test_x, test_y, test_order[:n_test], 10),
        num_classes=10,
        seed=seed,
    )
    logger.info(f"Loaded {splits}")
    return splits
