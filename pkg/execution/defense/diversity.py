"""
Diversity-trained autoencoder ensembles (graybox defense).

n autoencoders are first trained independently, then jointly on

    L(x) = sum_i MSE(x, ae_i(x)) - alpha * sum_i MSE(ae_i(x), mean_j ae_j(x))

which rewards members for disagreeing with the ensemble mean. At test time
one member is drawn uniformly at random to act as the reformer.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger

from execution.data.batch import DatasetSplits, ExampleBatch
from execution.errors import ConfigurationError, SerializationError, TrainingError
from execution.models.archive import fingerprint, load_model, save_model
from execution.models.inference import accuracy, model_device, reconstruct, to_tensor
from execution.models.networks import Autoencoder, Classifier, build_autoencoder
from execution.models.training import TrainingConfig, make_optimizer, minibatches, train_autoencoder, weight_penalty


MEMBER_NAMES = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
MANIFEST_NAME = "manifest.json"

# Phase 2 aborts once the summed reconstruction error grows past this
# multiple of its value at the end of phase 1.
RECONSTRUCTION_BLOWUP_FACTOR = 10.0


@dataclass
class Ensemble:
    """n autoencoders sharing input/output shapes, plus the diversity weight alpha."""

    members: List[Autoencoder]
    alpha: float
    pre_epochs: int = 0
    div_epochs: int = 0
    seed: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("ensemble needs at least one member")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        shapes = {tuple(m.input_shape) for m in self.members}
        if len(shapes) != 1:
            raise ConfigurationError(f"ensemble members disagree on input shape: {sorted(shapes)}")
        if len(self.members) > len(MEMBER_NAMES):
            raise ConfigurationError(f"at most {len(MEMBER_NAMES)} members are supported")

    def __repr__(self):
        return f"<Ensemble(n={self.n}, alpha={self.alpha}, phases=({self.pre_epochs}, {self.div_epochs}))>"

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def names(self) -> List[str]:
        return list(MEMBER_NAMES[:self.n])


def diversity_objective(x: torch.Tensor, members: Sequence[Autoencoder], alpha: float) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Differentiable ensemble loss on one batch.

    Returns:
        (total, reconstruction term, diversity term) with
        total = reconstruction - alpha * diversity
    """
    if not members:
        raise ConfigurationError("diversity loss needs at least one member")
    outputs = [member(x) for member in members]
    mean = torch.stack(outputs).mean(dim=0)
    reconstruction = torch.stack([F.mse_loss(out, x) for out in outputs]).sum()
    diversity = torch.stack([F.mse_loss(out, mean) for out in outputs]).sum()
    return reconstruction - alpha * diversity, reconstruction, diversity


@torch.no_grad()
def diversity_loss(batch: ExampleBatch, ensemble: Ensemble) -> float:
    """Value of the ensemble loss on a batch (per-pixel MSE averaged over the batch)."""
    for member in ensemble.members:
        member.eval()
    x = to_tensor(batch.images, ensemble.members[0])
    total, _, _ = diversity_objective(x, ensemble.members, ensemble.alpha)
    return float(total)


def _validation_reconstruction(members: Sequence[Autoencoder], validation: ExampleBatch) -> float:
    return float(sum(np.mean((reconstruct(m, validation) - validation.images) ** 2) for m in members))


def train_diverse_ensemble(
    archs: Sequence[str],
    data: DatasetSplits,
    cfg: TrainingConfig,
    alpha: float,
    pre_epochs: int,
    div_epochs: int,
) -> Ensemble:
    """
    Train an ensemble in two phases.

    Phase 1 trains each member independently on plain MSE for `pre_epochs`;
    phase 2 updates all members together with one optimizer on the ensemble
    loss for `div_epochs`.

    Args:
        archs: one autoencoder arch id per member (n = len(archs))
        data: dataset splits
        cfg: optimizer settings shared by both phases (epochs is ignored)
        alpha: diversity weight
        pre_epochs: independent epochs, >= 0
        div_epochs: joint epochs, >= 0

    Raises:
        ConfigurationError: empty arch list or negative phase lengths
        TrainingError: non-finite loss or runaway reconstruction error in phase 2
    """
    if not archs:
        raise ConfigurationError("ensemble needs at least one member arch")
    if pre_epochs < 0 or div_epochs < 0:
        raise ConfigurationError(f"phase lengths must be >= 0, got ({pre_epochs}, {div_epochs})")

    logger.info("=" * 60)
    logger.info(f"Training diverse ensemble: n={len(archs)}, alpha={alpha}, phases=({pre_epochs}, {div_epochs})")
    logger.info("=" * 60)

    members: List[Autoencoder] = []
    for i, arch in enumerate(archs):
        member = build_autoencoder(arch, input_shape=data.image_shape, seed=cfg.seed + i)
        if pre_epochs > 0:
            member_cfg = cfg.model_copy(update={"epochs": pre_epochs, "seed": cfg.seed + i})
            train_autoencoder(member, data, member_cfg)
        members.append(member)
        logger.info(f"  Member {MEMBER_NAMES[i]} ready ({arch})")

    ensemble = Ensemble(members, alpha, pre_epochs, div_epochs, cfg.seed)
    if div_epochs == 0:
        return ensemble

    baseline = _validation_reconstruction(members, data.validation)
    logger.info(f"Phase 1 reconstruction term (validation): {baseline:.6f}")

    device = model_device(members[0])
    parameters = list(itertools.chain.from_iterable(m.parameters() for m in members))
    optimizer = make_optimizer(parameters, cfg)
    rng = np.random.default_rng(cfg.seed + len(archs))
    images = torch.tensor(data.train.images, device=device)

    for epoch in range(1, div_epochs + 1):
        for member in members:
            member.train()

        total, seen = 0.0, 0
        for idx in minibatches(len(data.train), cfg.batch_size, rng):
            loss, _, _ = diversity_objective(images[torch.as_tensor(idx, device=device)], members, alpha)
            if cfg.l2_regularization > 0:
                loss = loss + cfg.l2_regularization * sum(weight_penalty(m) for m in members)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            total += float(loss.detach()) * len(idx)
            seen += len(idx)

        for member in members:
            member.eval()

        epoch_loss = total / max(seen, 1)
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"ensemble loss became non-finite; try a smaller alpha than {alpha}", epoch=epoch)

        recon = _validation_reconstruction(members, data.validation)
        spread = member_output_spread(ensemble, data.validation.take(256))
        ensemble.history.append({"epoch": epoch, "loss": epoch_loss, "val_reconstruction": recon, "spread": spread})
        logger.info(f"[ensemble] epoch {epoch}/{div_epochs}: loss={epoch_loss:.6f}, "
                    f"val_reconstruction={recon:.6f}, spread={spread:.6f}")

        if baseline > 0 and recon > RECONSTRUCTION_BLOWUP_FACTOR * baseline:
            raise TrainingError(
                f"reconstruction term {recon:.6f} exceeds {RECONSTRUCTION_BLOWUP_FACTOR:g}x its phase-1 value "
                f"{baseline:.6f}; try a smaller alpha than {alpha}",
                epoch=epoch,
            )

    logger.info(f"✓ Ensemble trained ({ensemble.n} members)")
    return ensemble


def member_output_spread(ensemble: Ensemble, batch: ExampleBatch) -> float:
    """Mean pairwise per-pixel MSE between member reconstructions of a batch."""
    if ensemble.n < 2 or len(batch) == 0:
        return 0.0
    outputs = [reconstruct(m, batch) for m in ensemble.members]
    pairs = list(itertools.combinations(outputs, 2))
    return float(np.mean([np.mean((a - b) ** 2) for a, b in pairs]))


def pick_random(ensemble: Ensemble, rng: np.random.Generator) -> int:
    """Uniformly random member index."""
    return int(rng.integers(ensemble.n))


def pick_random_per_example(ensemble: Ensemble, count: int, rng: np.random.Generator) -> np.ndarray:
    """One uniformly random member index per example."""
    return rng.integers(ensemble.n, size=count)


def save_ensemble(ensemble: Ensemble, directory: Union[str, Path]) -> Path:
    """Write one archive per member plus a manifest (alpha, phases, seed, fingerprints)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    members: List[Dict[str, Any]] = []
    for name, member in zip(ensemble.names, ensemble.members):
        path = save_model(member, directory / f"member_{name}.magnet")
        members.append({"name": name, "file": path.name, "arch": member.arch, "fingerprint": fingerprint(path)})

    manifest = {
        "alpha": ensemble.alpha,
        "pre_epochs": ensemble.pre_epochs,
        "div_epochs": ensemble.div_epochs,
        "seed": ensemble.seed,
        "history": ensemble.history,
        "members": members,
    }
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.info(f"Saved ensemble of {ensemble.n} members to {directory}")
    return manifest_path


def load_ensemble(directory: Union[str, Path]) -> Ensemble:
    """Rebuild an ensemble written by `save_ensemble`."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_NAME).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SerializationError(f"{directory / MANIFEST_NAME}: unreadable ensemble manifest ({e})") from e
    members = [load_model(directory / m["file"], expected_arch=m["arch"], expected_kind="autoencoder")
               for m in manifest["members"]]
    return Ensemble(
        members=members,
        alpha=manifest["alpha"],
        pre_epochs=manifest["pre_epochs"],
        div_epochs=manifest["div_epochs"],
        seed=manifest["seed"],
        history=manifest.get("history", []),
    )


def reform_with_ensemble(
    ensemble: Ensemble,
    batch: ExampleBatch,
    rng: np.random.Generator,
    per_example: bool = False,
) -> ExampleBatch:
    """
    Reform a batch with randomly chosen members.

    By default one member serves the whole batch; with `per_example` each
    example draws its own member.
    """
    if not per_example:
        member = ensemble.members[pick_random(ensemble, rng)]
        return batch.with_images(np.clip(reconstruct(member, batch), 0.0, 1.0))

    choice = pick_random_per_example(ensemble, len(batch), rng)
    images = np.array(batch.images, copy=True)
    for index in np.unique(choice):
        positions = np.flatnonzero(choice == index)
        images[positions] = reconstruct(ensemble.members[index], batch.subset(positions))
    return batch.with_images(np.clip(images, 0.0, 1.0))


def ensemble_normal_accuracy(ensemble: Ensemble, classifier: Classifier, test: ExampleBatch) -> Dict[str, float]:
    """
    Clean test accuracy with each member as the reformer, plus the expected
    accuracy under a uniformly random member ('random').
    """
    result: Dict[str, float] = {}
    for name, member in zip(ensemble.names, ensemble.members):
        reformed = test.with_images(np.clip(reconstruct(member, test), 0.0, 1.0))
        result[name] = accuracy(classifier, reformed)
    result["random"] = float(np.mean([result[name] for name in ensemble.names]))
    logger.info("Normal accuracy per member: " + ", ".join(f"{k}={v:.2%}" for k, v in result.items()))
    return result
