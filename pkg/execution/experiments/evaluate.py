"""
Evaluate the calibrated defense on normal test examples and on every saved
adversarial set; write the JSON report and the text table.
"""

from pathlib import Path
from typing import Dict, Optional

import numpy as np
from loguru import logger

from execution.attacks.adversarial import load_adversarial
from execution.config import ExperimentConfig, ReformerConfig
from execution.defense.detectors import detector_from_state
from execution.defense.diversity import load_ensemble
from execution.defense.pipeline import DefensePipeline, evaluate
from execution.defense.reformer import Reformer
from execution.errors import ConfigurationError, EvaluationError
from execution.experiments.common import (
    RunLayout,
    load_autoencoders,
    load_classifier,
    load_data,
    on_device,
    read_json,
    write_json,
)
from execution.models.networks import Autoencoder


def build_reformer(
    spec: ReformerConfig,
    autoencoders: Dict[str, Autoencoder],
    layout: RunLayout,
) -> Reformer:
    if spec.kind == "identity":
        return Reformer.identity()
    if spec.kind == "noise":
        return Reformer.noise(spec.epsilon)
    if spec.kind == "ensemble":
        ensemble = load_ensemble(layout.ensemble_dir)
        for member in ensemble.members:
            on_device(member)
        return Reformer.from_ensemble(ensemble, per_example=spec.per_example)
    if spec.autoencoder not in autoencoders:
        raise ConfigurationError(f"defense.reformer.autoencoder: unknown autoencoder '{spec.autoencoder}'")
    return Reformer.from_autoencoder(autoencoders[spec.autoencoder], spec.autoencoder)


def build_pipeline(
    config: ExperimentConfig,
    layout: RunLayout,
    reformer_kind: Optional[str] = None,
    use_detectors: bool = True,
) -> DefensePipeline:
    """
    Rebuild the calibrated defense from archives and the defense state file.

    Args:
        reformer_kind: overrides defense.reformer.kind (ablation runs)
        use_detectors: False drops every detector (reformer-only ablation)

    Raises:
        EvaluationError: the state file was calibrated against other models
    """
    state = read_json(layout.defense_state, "run 'calibrate' first")
    classifier, classifier_print = load_classifier(config, layout)
    autoencoders, ae_prints = load_autoencoders(config, layout)

    if state.get("classifier_fingerprint") != classifier_print:
        raise EvaluationError("defense state was calibrated for another classifier archive, rerun 'calibrate'")
    for name, recorded in state.get("autoencoder_fingerprints", {}).items():
        if ae_prints.get(name) != recorded:
            raise EvaluationError(f"defense state was calibrated for another '{name}' autoencoder, rerun 'calibrate'")

    detectors = [detector_from_state(s, autoencoders, classifier) for s in state["detectors"]]

    spec = config.defense.reformer
    if reformer_kind not in (None, "identity"):
        spec = spec.model_copy(update={"kind": reformer_kind})
    pipeline = DefensePipeline(
        classifier, detectors, build_reformer(spec, autoencoders, layout), classifier_print, config.dataset.name
    )

    if reformer_kind == "identity":
        pipeline = pipeline.without_reformer()
    if not use_detectors:
        pipeline = pipeline.without_detectors()
    return pipeline


def report_stem(reformer_kind: Optional[str] = None, use_detectors: bool = True) -> str:
    """report, report_<reformer>, report_no_detectors or report_<reformer>_no_detectors."""
    parts = ["report"]
    if reformer_kind is not None:
        parts.append(reformer_kind)
    if not use_detectors:
        parts.append("no_detectors")
    return "_".join(parts)


def cmd_evaluate(config: ExperimentConfig, reformer_kind: Optional[str] = None, use_detectors: bool = True) -> Path:
    """
    Evaluate the defense and write reports/report.json and report.txt
    (suffixed with the ablation when the reformer or detectors are overridden).

    Raises:
        SerializationError: a configured adversarial set was never generated
        EvaluationError: artifacts belong to another classifier or dataset
    """
    layout = RunLayout.for_config(config)
    data = load_data(config)
    pipeline = build_pipeline(config, layout, reformer_kind, use_detectors)

    adv_sets = []
    for spec in config.attacks.specs:
        sidecar = layout.attack_sidecar(spec.attack_id)
        if not sidecar.exists():
            raise EvaluationError(f"{sidecar}: adversarial set '{spec.attack_id}' missing, run 'attack' first")
        adv_sets.append(load_adversarial(sidecar, data.test))

    rng = np.random.default_rng(config.seed_for("evaluation"))
    report = evaluate(pipeline, data.test, adv_sets, rng)
    report.config = config.resolved_dict()

    stem = report_stem(reformer_kind, use_detectors)
    path = write_json(layout.reports_dir / f"{stem}.json", report.to_dict())
    text = report.to_text()
    (layout.reports_dir / f"{stem}.txt").write_text(text + "\n")
    print(text)

    logger.info(f"✓ Evaluation finished: pipeline accuracy on normal examples {report.normal.pipeline_accuracy:.2%}")
    return path
