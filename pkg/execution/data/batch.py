"""
Canonical example representation shared by every module.

Images are stored channels-last as float32 in [0, 1]; MNIST keeps a single
channel so both datasets use the same layout.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from execution.errors import InputShapeError


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ExampleBatch:
    """
    Images with integer ground-truth labels.

    Attributes:
        images: float32 array [count, height, width, channels], values in [0, 1]
        labels: int64 array [count], values in 0..num_classes-1
        num_classes: number of classes of the task
        indices: source record index of each example (for split bookkeeping)
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    indices: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float32, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)

        if images.ndim != 4:
            raise InputShapeError(f"images must be rank 4 [count, h, w, c], got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise InputShapeError(
                f"labels length {labels.shape} does not match image count {images.shape[0]}"
            )
        if images.size and not np.isfinite(images).all():
            raise InputShapeError("image values must be finite")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise InputShapeError("image values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InputShapeError(f"labels must lie in 0..{self.num_classes - 1}")

        if self.indices is None:
            indices = np.arange(images.shape[0], dtype=np.int64)
        else:
            indices = np.array(self.indices, dtype=np.int64, copy=True)
            if indices.shape != labels.shape:
                raise InputShapeError("indices length must match image count")

        object.__setattr__(self, "images", _frozen(images))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "indices", _frozen(indices))

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def __repr__(self):
        return f"<ExampleBatch(count={len(self)}, shape={self.image_shape}, classes={self.num_classes})>"

    @property
    def image_shape(self) -> tuple:
        """(height, width, channels) of a single image."""
        return tuple(self.images.shape[1:])

    def subset(self, positions: Sequence[int]) -> "ExampleBatch":
        """Select examples by position within this batch."""
        positions = np.asarray(positions, dtype=np.int64)
        return ExampleBatch(
            images=self.images[positions],
            labels=self.labels[positions],
            num_classes=self.num_classes,
            indices=self.indices[positions],
        )

    def take(self, count: int) -> "ExampleBatch":
        """First `count` examples (all of them if count exceeds the batch)."""
        return self.subset(np.arange(min(count, len(self))))

    def with_images(self, images: np.ndarray) -> "ExampleBatch":
        """Same labels and indices with replacement images."""
        images = np.asarray(images)
        if images.shape != self.images.shape:
            raise InputShapeError(f"replacement images {images.shape} != {self.images.shape}")
        return ExampleBatch(images=images, labels=self.labels, num_classes=self.num_classes, indices=self.indices)


@dataclass(frozen=True)
class DatasetSplits:
    """Disjoint train / validation / test batches of one dataset."""

    name: str
    train: ExampleBatch
    validation: ExampleBatch
    test: ExampleBatch
    num_classes: int
    seed: int = 0

    def __repr__(self):
        return (
            f"<DatasetSplits(name='{self.name}', train={len(self.train)}, "
            f"validation={len(self.validation)}, test={len(self.test)})>"
        )

    @property
    def image_shape(self) -> tuple:
        return self.train.image_shape

    def split(self, name: str) -> ExampleBatch:
        """Look a split up by name ('train', 'validation' or 'test')."""
        if name not in ("train", "validation", "test"):
            raise KeyError(f"unknown split '{name}'")
        return getattr(self, name)
