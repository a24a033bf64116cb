"""
Experiment commands: one module per CLI verb plus the shared artifact layout.
"""

from .common import RunLayout
from .train import cmd_train
from .calibrate import cmd_calibrate
from .attack import cmd_attack
from .evaluate import cmd_evaluate, build_pipeline
from .graybox import cmd_graybox
from .run_all import run_all

__all__ = [
    "RunLayout",
    "cmd_train",
    "cmd_calibrate",
    "cmd_attack",
    "cmd_evaluate",
    "build_pipeline",
    "cmd_graybox",
    "run_all",
]
