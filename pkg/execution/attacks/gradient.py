"""
Gradient-sign attacks: FGSM and its iterative (projected) variants.
"""

from typing import Literal, Optional

import torch
import torch.nn.functional as F
from torch import nn

from execution.attacks.adversarial import AdversarialBatch, perturb_batch
from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError
from execution.models.inference import DEFAULT_BATCH_SIZE


Norm = Literal["linf", "l2"]

GRADIENT_FLOOR = 1e-12


def loss_gradient(model: nn.Module, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Gradient of the summed cross-entropy w.r.t. the input batch."""
    x = x.detach().requires_grad_(True)
    loss = F.cross_entropy(model(x), y, reduction="sum")
    (grad,) = torch.autograd.grad(loss, x)
    return grad


def fgsm_tensor(model: nn.Module, x: torch.Tensor, y: torch.Tensor, eps: float) -> torch.Tensor:
    """x' = clip(x + eps * sign(grad), 0, 1)."""
    if eps == 0:
        return x.clone()
    return (x + eps * loss_gradient(model, x, y).sign()).clamp(0.0, 1.0)


def project(x_adv: torch.Tensor, x: torch.Tensor, norm: Norm, eps: float) -> torch.Tensor:
    """Project x_adv into the eps-ball around x, then into [0, 1]."""
    if norm == "linf":
        x_adv = torch.max(torch.min(x_adv, x + eps), x - eps)
    else:
        delta = x_adv - x
        length = delta.flatten(1).norm(dim=1).clamp_min(GRADIENT_FLOOR)
        factor = torch.clamp(eps / length, max=1.0).view(-1, *([1] * (x.dim() - 1)))
        x_adv = x + delta * factor
    return x_adv.clamp(0.0, 1.0)


def iterative_tensor(
    model: nn.Module,
    x: torch.Tensor,
    y: torch.Tensor,
    norm: Norm,
    eps: float,
    step: float,
    iters: int,
) -> torch.Tensor:
    """Repeated gradient steps of size `step`, each projected back into the eps-ball."""
    x_adv = x.clone()
    for _ in range(iters):
        grad = loss_gradient(model, x_adv, y)
        if norm == "linf":
            direction = grad.sign()
        else:
            length = grad.flatten(1).norm(dim=1).clamp_min(GRADIENT_FLOOR)
            direction = grad / length.view(-1, *([1] * (x.dim() - 1)))
        x_adv = project(x_adv + step * direction, x, norm, eps)
    return x_adv.detach()


def fgsm(c: nn.Module, batch: ExampleBatch, eps: float, batch_size: int = DEFAULT_BATCH_SIZE) -> AdversarialBatch:
    """
    Fast gradient sign method: one signed step of the cross-entropy gradient
    with respect to the true label.
    """
    if eps < 0:
        raise ConfigurationError(f"eps must be >= 0, got {eps}")
    perturbed, success = perturb_batch(c, batch, lambda x, y: (fgsm_tensor(c, x, y, eps), None), batch_size)
    return AdversarialBatch(batch, perturbed, success, "fgsm", {"eps": eps}, f"fgsm_eps{eps:g}")


def iterative_attack(
    c: nn.Module,
    batch: ExampleBatch,
    norm: Norm,
    eps: float,
    step: Optional[float] = None,
    iters: int = 10,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> AdversarialBatch:
    """
    Iterative gradient attack under an Linf or L2 budget.

    Args:
        c: differentiable classifier (channels-last input, logits out)
        batch: examples to perturb
        norm: 'linf' (signed steps) or 'l2' (unit-L2 normalized steps)
        eps: perturbation budget
        step: step size, defaults to eps / 5
        iters: number of steps, >= 1

    Returns:
        AdversarialBatch whose perturbations satisfy ||x' - x|| <= eps
    """
    if norm not in ("linf", "l2"):
        raise ConfigurationError(f"norm must be 'linf' or 'l2', got '{norm}'")
    if eps < 0:
        raise ConfigurationError(f"eps must be >= 0, got {eps}")
    if iters < 1:
        raise ConfigurationError(f"iters must be >= 1, got {iters}")
    step = eps / 5.0 if step is None else step

    method = f"iterative_{norm}"
    perturbed, success = perturb_batch(
        c, batch, lambda x, y: (iterative_tensor(c, x, y, norm, eps, step, iters), None), batch_size
    )
    params = {"eps": eps, "step": step, "iters": iters}
    return AdversarialBatch(batch, perturbed, success, method, params, f"{method}_eps{eps:g}")
