"""
Carlini-Wagner L2 attack (untargeted).

Minimizes ||delta||_2^2 + c * f(x + delta) in tanh space, where f is the
hinge max(Z_l - max_{i != l} Z_i, -kappa), with a per-example binary search
over c that keeps the smallest successful perturbation.
"""

from typing import Tuple

import numpy as np
import torch
from loguru import logger
from torch import nn

from execution.attacks.adversarial import AdversarialBatch, perturb_batch
from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError
from execution.models.inference import DEFAULT_BATCH_SIZE, carlini_objective


COEFF_UPPER = 1e10
# Keeps atanh finite for pixels at exactly 0 or 1.
ONE_MINUS_EPS = 0.999999
ABORT_CHECKS = 10


def margin(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Z_l - max_{i != l} Z_i per example (unclamped hinge)."""
    return carlini_objective(logits, labels, float("inf"))


def carlini_l2_tensor(
    model: nn.Module,
    x: torch.Tensor,
    y: torch.Tensor,
    kappa: float,
    initial_const: float,
    binary_steps: int,
    iterations: int,
    learning_rate: float,
    abort_early: bool = True,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Returns:
        (best adversarial point per example or the original, success flags)
    """
    n = x.shape[0]
    w0 = torch.atanh((x * 2.0 - 1.0) * ONE_MINUS_EPS)

    lower = torch.zeros(n, dtype=x.dtype, device=x.device)
    upper = torch.full_like(lower, COEFF_UPPER)
    const = torch.full_like(lower, initial_const)
    best_l2 = torch.full_like(lower, float("inf"))
    best_adv = x.clone()

    check_every = max(iterations // ABORT_CHECKS, 1)
    for search_step in range(binary_steps):
        w = w0.clone().requires_grad_(True)
        optimizer = torch.optim.Adam([w], lr=learning_rate)
        found = torch.zeros(n, dtype=torch.bool, device=x.device)
        previous = float("inf")

        for iteration in range(iterations):
            adv = (torch.tanh(w) + 1.0) / 2.0
            logits = model(adv)
            l2 = (adv - x).flatten(1).pow(2).sum(dim=1)
            loss = (l2 + const * carlini_objective(logits, y, kappa)).sum()

            with torch.no_grad():
                m = margin(logits, y)
                succeeded = (m <= -kappa) & (logits.argmax(dim=1) != y)
                improved = succeeded & (l2 < best_l2)
                best_l2 = torch.where(improved, l2, best_l2)
                best_adv[improved] = adv[improved].detach()
                found |= succeeded

            w.grad = torch.autograd.grad(loss, w)[0]
            optimizer.step()

            if abort_early and iteration % check_every == 0:
                value = float(loss.detach())
                if value > previous * 0.9999:
                    break
                previous = value

        upper = torch.where(found, torch.minimum(upper, const), upper)
        lower = torch.where(found, lower, torch.maximum(lower, const))
        const = torch.where(upper < COEFF_UPPER / 10, (lower + upper) / 2.0, const * 10.0)
        logger.debug(f"  c-search step {search_step + 1}/{binary_steps}: {int(found.sum())}/{n} succeeded")

    return best_adv.detach(), torch.isfinite(best_l2)


def carlini_l2(
    c: nn.Module,
    batch: ExampleBatch,
    kappa: float = 0.0,
    c_search: Tuple[float, int] = (1e-3, 9),
    opt: Tuple[int, float] = (1000, 0.01),
    abort_early: bool = True,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> AdversarialBatch:
    """
    Untargeted Carlini-Wagner L2 attack.

    Args:
        c: differentiable classifier-like module (logits out); composites
           such as classifier(ae(x)) work unchanged
        batch: examples to perturb
        kappa: confidence margin, >= 0
        c_search: (initial c, binary-search steps)
        opt: (optimizer iterations, learning rate)

    Returns:
        AdversarialBatch; examples never attacked successfully keep their
        original image and a false success flag
    """
    initial_const, binary_steps = c_search
    iterations, learning_rate = opt
    if kappa < 0:
        raise ConfigurationError(f"kappa must be >= 0, got {kappa}")
    if binary_steps < 1 or iterations < 1:
        raise ConfigurationError("binary-search steps and iterations must be >= 1")

    perturbed, success = perturb_batch(
        c,
        batch,
        lambda x, y: carlini_l2_tensor(
            c, x, y, kappa, initial_const, int(binary_steps), int(iterations), learning_rate, abort_early
        ),
        batch_size,
    )
    params = {
        "kappa": kappa,
        "initial_const": initial_const,
        "binary_steps": binary_steps,
        "iterations": iterations,
        "learning_rate": learning_rate,
        "abort_early": int(abort_early),
    }
    logger.info(f"Carlini L2 (kappa={kappa:g}): {int(np.sum(success))}/{len(success)} succeeded")
    return AdversarialBatch(batch, perturbed, success, "carlini_l2", params, f"carlini_l2_kappa{kappa:g}")
