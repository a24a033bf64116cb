"""
Orchestrator running the experiment stages in sequence.

A failed stage stops the run; later stages depend on its artifacts and are
recorded as skipped.
"""

from datetime import datetime, timezone
from typing import Any, Dict, Optional

from loguru import logger

from execution.config import ExperimentConfig
from execution.experiments.attack import cmd_attack
from execution.experiments.calibrate import cmd_calibrate
from execution.experiments.evaluate import cmd_evaluate
from execution.experiments.graybox import cmd_graybox
from execution.experiments.train import cmd_train


def _now() -> datetime:
    return datetime.now(timezone.utc)


def run_all(
    config: ExperimentConfig, reformer_kind: Optional[str] = None, use_detectors: bool = True
) -> Dict[str, Any]:
    """
    Run train, calibrate, attack, evaluate (and graybox when a diversity
    block is configured).

    Returns:
        Summary with per-stage status and durations
    """
    logger.info("=" * 60)
    logger.info(f"Starting full run into {config.output_dir}")
    logger.info("=" * 60)

    start_time = _now()
    results: Dict[str, Any] = {
        "started_at": start_time.isoformat(),
        "stages": [],
        "total_duration_seconds": 0,
        "success_count": 0,
        "failure_count": 0,
    }

    stages = [
        {"name": "train", "function": lambda: cmd_train(config), "enabled": True},
        {"name": "calibrate", "function": lambda: cmd_calibrate(config), "enabled": True},
        {"name": "attack", "function": lambda: cmd_attack(config), "enabled": True},
        {"name": "evaluate", "function": lambda: cmd_evaluate(config, reformer_kind, use_detectors), "enabled": True},
        {"name": "graybox", "function": lambda: cmd_graybox(config), "enabled": config.diversity is not None},
    ]

    failed = False
    for stage in stages:
        name = stage["name"]
        if not stage["enabled"]:
            logger.info(f"⊘ Skipping {name} (not configured)")
            continue

        stage_result: Dict[str, Any] = {"name": name, "status": "unknown", "error": None, "duration_seconds": 0}
        if failed:
            stage_result["status"] = "skipped"
            results["stages"].append(stage_result)
            continue

        logger.info("")
        logger.info("-" * 60)
        logger.info(f"Starting {name}...")
        logger.info("-" * 60)

        stage_start = _now()
        try:
            stage["function"]()
            stage_result["status"] = "completed"
            results["success_count"] += 1
            logger.info(f"✓ {name} completed successfully")
        except Exception as e:
            stage_result["status"] = "failed"
            stage_result["error"] = str(e)
            results["failure_count"] += 1
            failed = True
            logger.error(f"✗ {name} failed: {e}")
            logger.exception(e)
        finally:
            stage_result["duration_seconds"] = (_now() - stage_start).total_seconds()
            results["stages"].append(stage_result)
            logger.info(f"  Duration: {stage_result['duration_seconds']:.2f}s")

    total_duration = (_now() - start_time).total_seconds()
    results["total_duration_seconds"] = total_duration
    results["completed_at"] = _now().isoformat()

    logger.info("")
    logger.info("=" * 60)
    logger.info("RUN SUMMARY")
    logger.info("=" * 60)
    logger.info(f"Total Duration: {total_duration:.2f}s")
    logger.info(f"Successful: {results['success_count']}")
    logger.info(f"Failed: {results['failure_count']}")
    logger.info("")

    icons = {"completed": "✓", "skipped": "⊘"}
    for stage_result in results["stages"]:
        icon = icons.get(stage_result["status"], "✗")
        logger.info(f"{icon} {stage_result['name']}: {stage_result['status']} ({stage_result['duration_seconds']:.2f}s)")

    logger.info("=" * 60)
    return results
