"""
Training loops for classifiers and autoencoders.

Both loops share the same shape: seeded minibatch order, one optimizer step
per minibatch, a divergence check at the end of every epoch and a per-epoch
entry appended to the model's training log.
"""

import math
from typing import Callable, Dict, Iterator, List, Literal, Optional

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat
from torch import nn

from execution.data.augment import augment
from execution.data.batch import DatasetSplits, ExampleBatch
from execution.errors import InputShapeError, TrainingError
from execution.models.inference import accuracy, model_device, reconstruct
from execution.models.networks import Autoencoder, Classifier


class TrainingConfig(BaseModel):
    """Hyper-parameters of one training run."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    optimizer: Literal["sgd", "adam"] = "sgd"
    learning_rate: PositiveFloat = 0.01
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(50, ge=1)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    l2_regularization: float = Field(0.0, ge=0.0)
    augmentation: Literal["none", "shift_flip"] = "none"
    shift_fraction: float = Field(0.1, ge=0.0, le=0.5)
    seed: int = 0


def make_optimizer(parameters, cfg: TrainingConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(parameters, lr=cfg.learning_rate)
    return torch.optim.SGD(parameters, lr=cfg.learning_rate, momentum=cfg.momentum)


def minibatches(count: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index chunks covering every example once."""
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def weight_penalty(model: nn.Module) -> torch.Tensor:
    """Sum of squared weights (biases excluded)."""
    return torch.stack([p.pow(2).sum() for name, p in model.named_parameters() if name.endswith("weight")]).sum()


def _check_compatible(model: nn.Module, data: DatasetSplits) -> None:
    if tuple(data.image_shape) != tuple(model.input_shape):
        raise InputShapeError(f"{model.arch} expects images {model.input_shape}, dataset has {data.image_shape}")


def _run_epochs(
    model: nn.Module,
    train: ExampleBatch,
    cfg: TrainingConfig,
    step_loss: Callable[[torch.Tensor, torch.Tensor, torch.Generator], torch.Tensor],
    evaluate: Callable[[], Dict[str, float]],
    label: str,
) -> List[Dict[str, float]]:
    """Shared epoch loop; returns the per-epoch log."""
    device = model_device(model)
    rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator(device=device).manual_seed(cfg.seed)
    optimizer = make_optimizer(model.parameters(), cfg)
    history: List[Dict[str, float]] = []

    for epoch in range(1, cfg.epochs + 1):
        epoch_batch = augment(train, cfg.augmentation, rng, cfg.shift_fraction)
        images = torch.tensor(epoch_batch.images, device=device)
        labels = torch.tensor(epoch_batch.labels, device=device)

        model.train()
        total, seen = 0.0, 0
        for idx in minibatches(len(epoch_batch), cfg.batch_size, rng):
            idx_t = torch.as_tensor(idx, device=device)
            loss = step_loss(images[idx_t], labels[idx_t], noise_gen)
            if cfg.l2_regularization > 0:
                loss = loss + cfg.l2_regularization * weight_penalty(model)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            total += float(loss.detach()) * len(idx)
            seen += len(idx)

        epoch_loss = total / max(seen, 1)
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"{label} loss became non-finite", epoch=epoch)

        entry = {"epoch": epoch, "loss": epoch_loss, **evaluate()}
        history.append(entry)
        metrics = ", ".join(f"{k}={v:.4f}" for k, v in entry.items() if k != "epoch")
        logger.info(f"[{label}] epoch {epoch}/{cfg.epochs}: {metrics}")

    model.eval()
    return history


def train_classifier(c: Classifier, data: DatasetSplits, cfg: TrainingConfig) -> Classifier:
    """
    Train a classifier with cross-entropy on the training split.

    Validation accuracy is logged every epoch and the final test accuracy is
    recorded in the model's training log.

    Raises:
        InputShapeError: dataset images do not fit the architecture
        TrainingError: the loss became non-finite (carries the epoch index)
    """
    _check_compatible(c, data)
    logger.info("=" * 60)
    logger.info(f"Training classifier '{c.arch}' ({cfg.optimizer}, lr={cfg.learning_rate}, "
                f"batch={cfg.batch_size}, epochs={cfg.epochs})")
    logger.info("=" * 60)

    torch.manual_seed(cfg.seed)

    def step_loss(x, y, _gen):
        return F.cross_entropy(c(x), y)

    def evaluate():
        return {"val_accuracy": accuracy(c, data.validation)}

    history = _run_epochs(c, data.train, cfg, step_loss, evaluate, label="classifier")
    test_accuracy = accuracy(c, data.test)

    c.training_config = cfg.model_dump()
    c.training_log = history + [{"final_test_accuracy": test_accuracy}]

    logger.info(f"✓ Classifier '{c.arch}' trained: test accuracy {test_accuracy:.2%}")
    return c


def reconstruction_mse(ae: Autoencoder, batch: ExampleBatch) -> float:
    """Mean per-pixel squared reconstruction error over a batch."""
    if len(batch) == 0:
        return 0.0
    return float(np.mean((reconstruct(ae, batch) - batch.images) ** 2))


def corrupt(x: torch.Tensor, noise_sigma: float, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Denoising corruption: x + sigma * N(0, 1), clipped to [0, 1]."""
    if noise_sigma <= 0:
        return x
    noise = torch.randn(x.shape, generator=generator, device=x.device, dtype=x.dtype)
    return torch.clamp(x + noise_sigma * noise, 0.0, 1.0)


def train_autoencoder(ae: Autoencoder, data: DatasetSplits, cfg: TrainingConfig, noise_sigma: float = 0.0) -> Autoencoder:
    """
    Train an autoencoder on mean squared reconstruction error.

    Args:
        ae: autoencoder to train in place
        data: splits; validation reconstruction error is logged per epoch
        cfg: training hyper-parameters (l2_regularization penalizes weights)
        noise_sigma: 0 for a plain autoencoder; > 0 trains a denoising
            autoencoder whose input is corrupted by Gaussian noise of that
            scale while the target stays the clean image

    Raises:
        TrainingError: the loss became non-finite
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    _check_compatible(ae, data)

    logger.info("=" * 60)
    logger.info(f"Training autoencoder '{ae.arch}' ({cfg.optimizer}, lr={cfg.learning_rate}, "
                f"epochs={cfg.epochs}, noise_sigma={noise_sigma})")
    logger.info("=" * 60)

    torch.manual_seed(cfg.seed)

    def step_loss(x, _y, gen):
        return F.mse_loss(ae(corrupt(x, noise_sigma, gen)), x)

    def evaluate():
        return {"val_mse": reconstruction_mse(ae, data.validation)}

    history = _run_epochs(ae, data.train, cfg, step_loss, evaluate, label=f"autoencoder {ae.arch}")

    ae.training_config = {**cfg.model_dump(), "noise_sigma": noise_sigma}
    ae.training_log = history

    logger.info(f"✓ Autoencoder '{ae.arch}' trained: validation MSE {history[-1]['val_mse']:.6f}")
    return ae
