"""
DeepFool, Linf version.

Each iteration linearizes every class boundary around the current point and
steps to the closest one under the Linf norm, i.e. along sign(w) with length
|f| / ||w||_1. The accumulated step is scaled by (1 + overshoot).
"""

import torch
from torch import nn

from execution.attacks.adversarial import AdversarialBatch, perturb_batch
from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError
from execution.models.inference import DEFAULT_BATCH_SIZE


# Keeps the step from landing exactly on the boundary.
BOUNDARY_MARGIN = 1e-4
NORM_FLOOR = 1e-12


def deepfool_linf_tensor(model: nn.Module, x: torch.Tensor, y: torch.Tensor, max_iters: int, overshoot: float) -> torch.Tensor:
    n = x.shape[0]
    rows = torch.arange(n, device=x.device)
    broadcast = (-1,) + (1,) * (x.dim() - 1)

    r_total = torch.zeros_like(x)
    x_adv = x.clone()
    for _ in range(max_iters):
        x_var = x_adv.detach().requires_grad_(True)
        logits = model(x_var)
        active = logits.argmax(dim=1) == y
        if not bool(active.any()):
            break

        num_classes = logits.shape[1]
        grads = torch.stack(
            [
                torch.autograd.grad(logits[:, k].sum(), x_var, retain_graph=k < num_classes - 1)[0]
                for k in range(num_classes)
            ],
            dim=1,
        )
        w = grads - grads[rows, y].unsqueeze(1)
        f = (logits - logits.gather(1, y.view(-1, 1))).detach()

        w_l1 = w.flatten(2).abs().sum(dim=2).clamp_min(NORM_FLOOR)
        distance = f.abs() / w_l1
        distance[rows, y] = float("inf")
        nearest = distance.argmin(dim=1)

        step = (f[rows, nearest].abs() + BOUNDARY_MARGIN) / w_l1[rows, nearest]
        r = step.view(broadcast) * w[rows, nearest].sign()
        r_total = r_total + r * active.view(broadcast).to(r.dtype)
        x_adv = (x + (1.0 + overshoot) * r_total).clamp(0.0, 1.0)

    return x_adv.detach()


def deepfool_linf(
    c: nn.Module,
    batch: ExampleBatch,
    max_iters: int = 50,
    overshoot: float = 0.02,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> AdversarialBatch:
    """
    Minimal Linf perturbation that changes the predicted label.

    Inputs the classifier already gets wrong come back unchanged; examples
    still classified correctly after max_iters carry a false success flag.
    """
    if max_iters < 1:
        raise ConfigurationError(f"max_iters must be >= 1, got {max_iters}")
    if overshoot < 0:
        raise ConfigurationError(f"overshoot must be >= 0, got {overshoot}")

    perturbed, success = perturb_batch(
        c, batch, lambda x, y: (deepfool_linf_tensor(c, x, y, max_iters, overshoot), None), batch_size
    )
    params = {"max_iters": max_iters, "overshoot": overshoot}
    return AdversarialBatch(batch, perturbed, success, "deepfool_linf", params, "deepfool_linf")
