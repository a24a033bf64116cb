"""
AdversarialBatch record and its on-disk artifact.

An artifact is a pair of files sharing a stem:
- <id>.npy   perturbed images (float32, channels-last)
- <id>.json  sidecar: method, parameters, classifier fingerprint, source
             indices and labels of the originals, success flags and norms

Originals are stored by reference (indices into the test split) and
resolved again on load.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from loguru import logger
from torch import nn

from execution.data.batch import ExampleBatch
from execution.errors import EvaluationError, InputShapeError, SerializationError
from execution.models.inference import DEFAULT_BATCH_SIZE, model_device, model_dtype


Perturbation = Callable[[torch.Tensor, torch.Tensor], Tuple[torch.Tensor, Optional[torch.Tensor]]]


def perturbation_norms(originals: np.ndarray, perturbed: np.ndarray) -> Dict[str, np.ndarray]:
    """Per-example L1, L2 and Linf norms of perturbed - originals."""
    width = int(np.prod(originals.shape[1:]))
    diff = (perturbed.astype(np.float64) - originals.astype(np.float64)).reshape(len(originals), width)
    return {
        "l1": np.abs(diff).sum(axis=1),
        "l2": np.sqrt((diff ** 2).sum(axis=1)),
        "linf": np.abs(diff).max(axis=1) if diff.shape[1] else np.zeros(len(diff)),
    }


@dataclass
class AdversarialBatch:
    originals: ExampleBatch
    perturbed: np.ndarray
    success: np.ndarray
    method: str
    params: Dict[str, float]
    attack_id: str
    classifier_fingerprint: Optional[str] = None
    dataset: Optional[str] = None
    norms: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.perturbed = np.asarray(self.perturbed, dtype=np.float32)
        self.success = np.asarray(self.success, dtype=bool)
        if self.perturbed.shape != self.originals.images.shape:
            raise InputShapeError(
                f"perturbed shape {self.perturbed.shape} does not match originals {self.originals.images.shape}"
            )
        if self.success.shape != (len(self.originals),):
            raise InputShapeError(f"success flags of shape {self.success.shape} for {len(self.originals)} examples")
        if self.perturbed.size and (self.perturbed.min() < 0.0 or self.perturbed.max() > 1.0):
            raise InputShapeError("perturbed images must lie in [0, 1]")
        if not self.norms:
            self.norms = perturbation_norms(self.originals.images, self.perturbed)

    def __len__(self) -> int:
        return len(self.originals)

    def __repr__(self):
        return f"<AdversarialBatch(id='{self.attack_id}', count={len(self)}, success_rate={self.success_rate:.3f})>"

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if len(self) else 0.0

    def as_batch(self) -> ExampleBatch:
        """Perturbed images with the original labels and indices."""
        return self.originals.with_images(self.perturbed)


def perturb_batch(
    model: nn.Module,
    batch: ExampleBatch,
    perturb: Perturbation,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run a tensor-level perturbation over a batch in chunks.

    `perturb(x, y)` returns the perturbed chunk and optionally its success
    flags; when it returns None, success means the model's argmax differs
    from the true label.

    Returns:
        (perturbed images, success flags)
    """
    expected = getattr(model, "input_shape", None)
    if expected is not None and tuple(batch.image_shape) != tuple(expected):
        raise InputShapeError(f"batch of shape {batch.images.shape} does not fit model input {expected}")

    model.eval()
    device, dtype = model_device(model), model_dtype(model)
    images, flags = [], []
    for start in range(0, len(batch), batch_size):
        x = torch.tensor(batch.images[start:start + batch_size], dtype=dtype, device=device)
        y = torch.tensor(batch.labels[start:start + batch_size], dtype=torch.long, device=device)
        x_adv, success = perturb(x, y)
        x_adv = x_adv.detach().clamp(0.0, 1.0)
        if success is None:
            with torch.no_grad():
                success = model(x_adv).argmax(dim=1) != y
        images.append(x_adv.cpu().numpy())
        flags.append(success.detach().cpu().numpy())
        logger.debug(f"  perturbed examples {start}..{start + len(x) - 1}")

    if not images:
        return np.zeros_like(batch.images), np.zeros(0, dtype=bool)
    return np.concatenate(images), np.concatenate(flags).astype(bool)


def save_adversarial(adv: AdversarialBatch, directory: Union[str, Path]) -> Path:
    """Write the image blob and JSON sidecar; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = directory / f"{adv.attack_id}.npy"
    sidecar = directory / f"{adv.attack_id}.json"

    np.save(blob, adv.perturbed)
    document: Dict[str, Any] = {
        "attack_id": adv.attack_id,
        "method": adv.method,
        "params": adv.params,
        "classifier_fingerprint": adv.classifier_fingerprint,
        "dataset": adv.dataset,
        "blob": blob.name,
        "indices": adv.originals.indices.tolist(),
        "labels": adv.originals.labels.tolist(),
        "success": adv.success.tolist(),
        "norms": {k: v.tolist() for k, v in adv.norms.items()},
    }
    sidecar.write_text(json.dumps(document, indent=2))
    logger.info(f"Saved adversarial set '{adv.attack_id}' ({len(adv)} examples) to {sidecar}")
    return sidecar


def load_adversarial(sidecar: Union[str, Path], test: ExampleBatch) -> AdversarialBatch:
    """
    Load an artifact and re-attach its originals from the test split.

    Raises:
        SerializationError: unreadable sidecar or blob
        EvaluationError: originals no longer found in the given test split
    """
    sidecar = Path(sidecar)
    try:
        document = json.loads(sidecar.read_text())
        perturbed = np.load(sidecar.parent / document["blob"])
    except (OSError, ValueError, KeyError) as e:
        raise SerializationError(f"{sidecar}: unreadable adversarial artifact ({e})") from e

    position = {int(index): i for i, index in enumerate(test.indices)}
    try:
        positions: List[int] = [position[int(index)] for index in document["indices"]]
    except KeyError as e:
        raise EvaluationError(f"{sidecar}: source example {e.args[0]} is not in the test split") from e

    originals = test.subset(positions)
    if not np.array_equal(originals.labels, np.asarray(document["labels"])):
        raise EvaluationError(f"{sidecar}: labels disagree with the test split")

    return AdversarialBatch(
        originals=originals,
        perturbed=perturbed,
        success=np.asarray(document["success"], dtype=bool),
        method=document["method"],
        params=document["params"],
        attack_id=document["attack_id"],
        classifier_fingerprint=document.get("classifier_fingerprint"),
        dataset=document.get("dataset"),
        norms={k: np.asarray(v) for k, v in document.get("norms", {}).items()},
    )
