"""
Training-time augmentation policies.
"""

import numpy as np

from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError


AUGMENTATION_POLICIES = ("none", "shift_flip")

DEFAULT_SHIFT_FRACTION = 0.1


def _shift(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate an HWC image by (dy, dx) pixels, filling vacated pixels with zeros."""
    height, width = image.shape[:2]
    shifted = np.zeros_like(image)

    src_y = slice(max(0, -dy), min(height, height - dy))
    dst_y = slice(max(0, dy), min(height, height + dy))
    src_x = slice(max(0, -dx), min(width, width - dx))
    dst_x = slice(max(0, dx), min(width, width + dx))

    shifted[dst_y, dst_x] = image[src_y, src_x]
    return shifted


def augment(
    batch: ExampleBatch,
    policy: str,
    rng: np.random.Generator,
    shift_fraction: float = DEFAULT_SHIFT_FRACTION,
) -> ExampleBatch:
    """
    Apply an augmentation policy to every image of a batch.

    'shift_flip' translates each image by a random offset within
    ±floor(shift_fraction * size) pixels per axis (zero padded) and flips it
    horizontally with probability 0.5, independently per image.

    Args:
        batch: images to augment
        policy: 'none' or 'shift_flip'
        rng: seeded generator driving the random offsets and flips
        shift_fraction: maximum shift as a fraction of height/width

    Returns:
        New batch of the same shape, values still in [0, 1]
    """
    if policy not in AUGMENTATION_POLICIES:
        raise ConfigurationError(f"unknown augmentation policy '{policy}', expected one of {AUGMENTATION_POLICIES}")

    if policy == "none" or len(batch) == 0:
        return batch

    count, height, width, _ = batch.images.shape
    max_dy = int(np.floor(shift_fraction * height))
    max_dx = int(np.floor(shift_fraction * width))

    dys = rng.integers(-max_dy, max_dy + 1, size=count)
    dxs = rng.integers(-max_dx, max_dx + 1, size=count)
    flips = rng.random(count) < 0.5

    out = np.empty_like(batch.images)
    for i in range(count):
        image = _shift(batch.images[i], int(dys[i]), int(dxs[i]))
        out[i] = image[:, ::-1] if flips[i] else image

    return batch.with_images(out)
