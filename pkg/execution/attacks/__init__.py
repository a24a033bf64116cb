"""
Untargeted adversarial attacks against a differentiable classifier.
"""

from .spec import AttackSpec, METHOD_PARAMETERS
from .adversarial import AdversarialBatch, perturbation_norms, save_adversarial, load_adversarial
from .gradient import fgsm, iterative_attack
from .deepfool import deepfool_linf
from .carlini import carlini_l2
from .runner import run_attack

__all__ = [
    "AttackSpec",
    "METHOD_PARAMETERS",
    "AdversarialBatch",
    "perturbation_norms",
    "save_adversarial",
    "load_adversarial",
    "fgsm",
    "iterative_attack",
    "deepfool_linf",
    "carlini_l2",
    "run_attack",
]
