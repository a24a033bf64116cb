"""
Inference-side helpers: logits, temperature softmax, reconstructions and the
exact input-gradient contract every attack builds on.
"""

from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError, InputShapeError


GRADIENT_LOSSES = ("cross_entropy", "carlini")

DEFAULT_BATCH_SIZE = 500

ArrayLike = Union[np.ndarray, ExampleBatch]


def model_device(model: nn.Module) -> torch.device:
    return next(model.parameters()).device


def model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def _images(data: ArrayLike) -> np.ndarray:
    return data.images if isinstance(data, ExampleBatch) else np.asarray(data)


def to_tensor(images: np.ndarray, model: nn.Module) -> torch.Tensor:
    """Move a channels-last numpy batch onto the model's device and dtype."""
    return torch.tensor(images, dtype=model_dtype(model), device=model_device(model))


def _check_shape(model: nn.Module, images: np.ndarray) -> None:
    expected = getattr(model, "input_shape", None)
    if images.ndim != 4 or (expected is not None and tuple(images.shape[1:]) != tuple(expected)):
        raise InputShapeError(f"batch of shape {images.shape} does not fit model input {expected}")


@torch.no_grad()
def forward_numpy(model: nn.Module, data: ArrayLike, batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """Run a model over a batch in chunks, returning a numpy array."""
    images = _images(data)
    _check_shape(model, images)
    was_training = model.training
    model.eval()
    try:
        if len(images) == 0:
            # Empty batch keeps the per-example output shape.
            out_shape = model(to_tensor(np.zeros((1, *images.shape[1:])), model)).shape[1:]
            return np.zeros((0, *out_shape), dtype=np.float32)
        outputs = [
            model(to_tensor(images[start:start + batch_size], model)).cpu().numpy()
            for start in range(0, len(images), batch_size)
        ]
    finally:
        model.train(was_training)
    return np.concatenate(outputs)


def softmax_t(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """
    Softmax of logits / T along the last axis, computed stably.

    T > 1 flattens the distribution; argmax is unchanged for every T > 0.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    exp = np.exp(scaled)
    return exp / exp.sum(axis=-1, keepdims=True)


def classify(model: nn.Module, data: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Classify a batch.

    Returns:
        (logits [count, classes], probabilities at T = 1, predicted labels = argmax of logits)
    """
    logits = forward_numpy(model, data)
    return logits, softmax_t(logits, 1.0), np.argmax(logits, axis=1)


def accuracy(model: nn.Module, batch: ExampleBatch) -> float:
    """Fraction of examples whose predicted label equals the ground truth."""
    if len(batch) == 0:
        return 0.0
    _, _, predicted = classify(model, batch)
    return float(np.mean(predicted == batch.labels))


def reconstruct(autoencoder: nn.Module, data: ArrayLike) -> np.ndarray:
    """ae(x) for every image of the batch."""
    return forward_numpy(autoencoder, data)


def carlini_objective(logits: torch.Tensor, labels: torch.Tensor, kappa: float) -> torch.Tensor:
    """
    Per-example hinge f(x') = max(Z_l - max_{i != l} Z_i, -kappa).

    f <= -kappa means the example is misclassified with margin kappa.
    """
    true_logit = logits.gather(1, labels.view(-1, 1)).squeeze(1)
    other = logits.masked_fill(F.one_hot(labels, logits.shape[1]).bool(), float("-inf"))
    best_other = other.max(dim=1).values
    return torch.clamp(true_logit - best_other, min=-kappa)


def loss_per_example(logits: torch.Tensor, labels: torch.Tensor, loss: str, kappa: float = 0.0) -> torch.Tensor:
    """Per-example attack loss selected by name."""
    if loss == "cross_entropy":
        return F.cross_entropy(logits, labels, reduction="none")
    if loss == "carlini":
        return carlini_objective(logits, labels, kappa)
    raise ConfigurationError(f"unsupported loss '{loss}', expected one of {GRADIENT_LOSSES}")


def input_gradient(
    model: nn.Module,
    data: ArrayLike,
    labels: Optional[np.ndarray] = None,
    loss: str = "cross_entropy",
    kappa: float = 0.0,
) -> np.ndarray:
    """
    Exact gradient of the summed per-example loss with respect to the input.

    Args:
        model: any module mapping a channels-last batch to logits
        data: ExampleBatch or image array
        labels: labels the loss is computed against (defaults to the batch labels)
        loss: 'cross_entropy' or 'carlini' (the hinge objective with margin kappa)
        kappa: confidence margin for the carlini loss

    Returns:
        Gradient array with the same shape as the images
    """
    if loss not in GRADIENT_LOSSES:
        raise ConfigurationError(f"unsupported loss '{loss}', expected one of {GRADIENT_LOSSES}")

    images = _images(data)
    if labels is None:
        if not isinstance(data, ExampleBatch):
            raise ConfigurationError("labels are required when passing a raw image array")
        labels = data.labels
    _check_shape(model, images)

    x = to_tensor(images, model).requires_grad_(True)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long, device=x.device)

    model.eval()
    value = loss_per_example(model(x), y, loss, kappa).sum()
    if not value.requires_grad:
        return np.zeros_like(images, dtype=np.float32)
    (grad,) = torch.autograd.grad(value, x, allow_unused=True)
    if grad is None:
        return np.zeros_like(images, dtype=np.float32)
    return grad.detach().cpu().numpy()
