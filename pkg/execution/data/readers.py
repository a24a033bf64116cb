"""
Readers for the raw MNIST IDX files and CIFAR-10 binary batches.

Each reader validates magic numbers and byte counts before trusting the
payload, and reports the offending file on failure.
"""

import gzip
import hashlib
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from execution.errors import DatasetLoadError


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_RECORD_BYTES = 1 + 3072
CIFAR_IMAGE_SHAPE = (3, 32, 32)


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise DatasetLoadError(str(path), "file not found")
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as handle:
                return handle.read()
        return path.read_bytes()
    except OSError as e:
        raise DatasetLoadError(str(path), f"unreadable ({e})") from e


def verify_checksum(path: Path, expected_sha256: Optional[str]) -> None:
    """Compare a file's sha256 against the configured digest, if one is given."""
    if not expected_sha256:
        return
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    if digest != expected_sha256.lower():
        raise DatasetLoadError(str(path), f"sha256 mismatch (got {digest[:12]}..., expected {expected_sha256[:12]}...)")
    logger.debug(f"Checksum OK for {path.name}")


def read_idx_images(path: Path) -> np.ndarray:
    """
    Read an IDX3 image file.

    Returns:
        uint8 array [count, 28, 28, 1]
    """
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DatasetLoadError(str(path), "truncated IDX header")

    magic, count, rows, cols = np.frombuffer(raw[:16], dtype=">u4")
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetLoadError(str(path), f"bad IDX image magic 0x{int(magic):08x}")

    expected = 16 + int(count) * int(rows) * int(cols)
    if len(raw) != expected:
        raise DatasetLoadError(str(path), f"expected {expected} bytes, found {len(raw)}")

    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(int(count), int(rows), int(cols), 1)


def read_idx_labels(path: Path) -> np.ndarray:
    """Read an IDX1 label file into an int64 array."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DatasetLoadError(str(path), "truncated IDX header")

    magic, count = np.frombuffer(raw[:8], dtype=">u4")
    if magic != IDX_LABELS_MAGIC:
        raise DatasetLoadError(str(path), f"bad IDX label magic 0x{int(magic):08x}")
    if len(raw) != 8 + int(count):
        raise DatasetLoadError(str(path), f"expected {8 + int(count)} bytes, found {len(raw)}")

    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def read_cifar_batch(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read one CIFAR-10 binary batch (1 label byte + 3072 pixel bytes per record).

    Returns:
        (uint8 images [count, 32, 32, 3], int64 labels [count])
    """
    raw = _read_bytes(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
        raise DatasetLoadError(str(path), f"size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")

    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DatasetLoadError(str(path), f"label byte {labels.max()} out of range")

    images = records[:, 1:].reshape(-1, *CIFAR_IMAGE_SHAPE).transpose(0, 2, 3, 1)
    return images, labels
