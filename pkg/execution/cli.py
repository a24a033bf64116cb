"""
Command-line entry point.

Usage:
    python -m execution.cli train     --config configs/mnist.toml --out out/mnist
    python -m execution.cli calibrate --config configs/mnist.toml --out out/mnist
    python -m execution.cli attack    --config configs/mnist.toml --out out/mnist [--attack ID ...]
    python -m execution.cli evaluate  --config configs/mnist.toml --out out/mnist [--reformer noise] [--detectors none]
    python -m execution.cli graybox   --config configs/mnist.toml --out out/mnist
    python -m execution.cli run-all   --config configs/fast.toml  --out out/fast

Exit code 0 on success; otherwise 1 with a one-line diagnostic on stderr.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from loguru import logger

from execution.config import ExperimentConfig, apply_runtime_settings, load_experiment_config, settings
from execution.errors import MagnetError
from execution.experiments import cmd_attack, cmd_calibrate, cmd_evaluate, cmd_graybox, cmd_train, run_all
from execution.experiments.common import RunLayout


REFORMER_CHOICES = ("identity", "noise", "autoencoder", "ensemble")
DETECTOR_CHOICES = ("all", "none")


def configure_logging(out_dir: Optional[Path]) -> None:
    """stderr sink at the configured level plus a per-run file sink."""
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level.upper())
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.add(RunLayout(out_dir).run_log, level="DEBUG", encoding="utf-8")
    if settings.log_file:
        logger.add(settings.log_file, level=settings.log_level.upper(), rotation="10 MB")


def _run_all(config: ExperimentConfig, args: argparse.Namespace) -> None:
    results = run_all(config, args.reformer, args.detectors == "all")
    if results["failure_count"] > 0:
        failed = next(s for s in results["stages"] if s["status"] == "failed")
        raise MagnetError(f"stage '{failed['name']}' failed: {failed['error']}")


COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], object]] = {
    "train": lambda config, args: cmd_train(config),
    "calibrate": lambda config, args: cmd_calibrate(config),
    "attack": lambda config, args: cmd_attack(config, args.attack),
    "evaluate": lambda config, args: cmd_evaluate(config, args.reformer, args.detectors == "all"),
    "graybox": lambda config, args: cmd_graybox(config),
    "run-all": _run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magnet", description="Train, attack and evaluate a MagNet-style defense")
    verbs = parser.add_subparsers(dest="command", required=True)

    helps = {
        "train": "Train the classifier, defense autoencoders and diversity ensemble",
        "calibrate": "Set detector thresholds on the validation split",
        "attack": "Generate adversarial sets against the classifier",
        "evaluate": "Evaluate the defense and write the report",
        "graybox": "Evaluate the diversity ensemble against graybox attacks",
        "run-all": "Run train, calibrate, attack, evaluate (and graybox) in sequence",
    }
    for verb, help_text in helps.items():
        sub = verbs.add_parser(verb, help=help_text)
        sub.add_argument("--config", required=True, type=Path, help="Experiment TOML file")
        sub.add_argument("--out", type=Path, default=None, help="Output directory (overrides output_dir)")
        if verb == "attack":
            sub.add_argument("--attack", nargs="+", default=None, metavar="ID", help="Only these attack ids")
        if verb in ("evaluate", "run-all"):
            sub.add_argument("--reformer", choices=REFORMER_CHOICES, default=None, help="Override the reformer (ablation)")
            sub.add_argument("--detectors", choices=DETECTOR_CHOICES, default="all", help="'none' evaluates the reformer alone")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(None)

    try:
        config = load_experiment_config(args.config, args.out)
        configure_logging(Path(config.output_dir))
        apply_runtime_settings()
        logger.info(f"magnet {args.command}: config={args.config}, out={config.output_dir}, seed={config.base_seed()}")
        COMMANDS[args.command](config, args)
    except MagnetError as e:
        logger.error(f"✗ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(e)
        print(f"error: unexpected {type(e).__name__}: {e}", file=sys.stderr)
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
