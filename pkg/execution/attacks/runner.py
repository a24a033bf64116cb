"""
Dispatch an AttackSpec to its method.
"""

from dataclasses import replace
from typing import Optional

from loguru import logger
from torch import nn

from execution.attacks.adversarial import AdversarialBatch
from execution.attacks.carlini import carlini_l2
from execution.attacks.deepfool import deepfool_linf
from execution.attacks.gradient import fgsm, iterative_attack
from execution.attacks.spec import AttackSpec
from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError
from execution.models.inference import DEFAULT_BATCH_SIZE, accuracy


def run_attack(
    model: nn.Module,
    batch: ExampleBatch,
    spec: AttackSpec,
    batch_size: int = DEFAULT_BATCH_SIZE,
    classifier_fingerprint: Optional[str] = None,
    dataset: Optional[str] = None,
) -> AdversarialBatch:
    """
    Generate one adversarial set.

    Args:
        model: classifier (or classifier-like composite) under attack
        batch: examples to perturb
        spec: attack method and parameters
        batch_size: examples per chunk; results do not depend on it
        classifier_fingerprint: archive hash recorded on the result
        dataset: dataset name recorded on the result
    """
    p = spec.resolved()
    logger.info(f"Running {spec.attack_id} on {len(batch)} examples")

    if spec.method == "fgsm":
        adv = fgsm(model, batch, p["eps"], batch_size=batch_size)
    elif spec.method in ("iterative_linf", "iterative_l2"):
        norm = spec.method.split("_")[1]
        adv = iterative_attack(model, batch, norm, p["eps"], p["step"], int(p["iters"]), batch_size=batch_size)
    elif spec.method == "deepfool_linf":
        adv = deepfool_linf(model, batch, int(p["max_iters"]), p["overshoot"], batch_size=batch_size)
    elif spec.method == "carlini_l2":
        adv = carlini_l2(
            model,
            batch,
            kappa=p["kappa"],
            c_search=(p["initial_const"], int(p["binary_steps"])),
            opt=(int(p["iterations"]), p["learning_rate"]),
            abort_early=bool(p["abort_early"]),
            batch_size=batch_size,
        )
    else:
        raise ConfigurationError(f"unknown attack method '{spec.method}'")

    adv = replace(adv, attack_id=spec.attack_id, classifier_fingerprint=classifier_fingerprint, dataset=dataset)
    logger.info(f"✓ {spec.attack_id}: success rate {adv.success_rate:.1%}, "
                f"undefended accuracy {accuracy(model, adv.as_batch()):.1%}")
    return adv
