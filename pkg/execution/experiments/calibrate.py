"""
Calibrate detector thresholds on the normal validation split and write the
defense state file.
"""

from pathlib import Path
from typing import Dict, List

import numpy as np
from loguru import logger

from execution.config import DetectorConfig, ExperimentConfig
from execution.defense.detectors import Detector, DivergenceDetector, ReconstructionDetector
from execution.experiments.common import RunLayout, load_autoencoders, load_classifier, load_data, write_json
from execution.models.networks import Autoencoder, Classifier


def build_detector(spec: DetectorConfig, autoencoders: Dict[str, Autoencoder], classifier: Classifier) -> Detector:
    ae = autoencoders[spec.autoencoder]
    if spec.kind == "reconstruction":
        return ReconstructionDetector(ae, spec.norm, spec.t_fp, name=spec.detector_name, autoencoder_name=spec.autoencoder)
    return DivergenceDetector(
        ae, classifier, spec.temperature, spec.t_fp, name=spec.detector_name, autoencoder_name=spec.autoencoder
    )


def cmd_calibrate(config: ExperimentConfig) -> Path:
    """
    Set every configured detector's threshold and record it.

    The state file lists, per detector, its kind, autoencoder, norm or
    temperature, t_fp, threshold, the FPR achieved on validation data and
    the FPR on the normal test split as a held-out check.
    """
    layout = RunLayout.for_config(config)
    data = load_data(config)
    classifier, classifier_print = load_classifier(config, layout)
    autoencoders, ae_prints = load_autoencoders(config, layout)

    logger.info("=" * 60)
    logger.info(f"Calibrating {len(config.defense.detectors)} detectors on {len(data.validation)} validation examples")
    logger.info("=" * 60)

    states: List[dict] = []
    for spec in config.defense.detectors:
        if spec.t_fp * len(data.validation) < 1:
            logger.warning(f"{spec.detector_name}: t_fp={spec.t_fp} allows no validation false positives, "
                           f"threshold is the maximum score")
        detector = build_detector(spec, autoencoders, classifier)
        detector.calibrate(data.validation)
        heldout = float(np.mean(detector.detect(data.test))) if len(data.test) else 0.0
        logger.info(f"  {detector.name}: held-out FPR {heldout:.4%}")
        states.append({**detector.to_dict(), "heldout_fpr": heldout})

    document = {
        "dataset": config.dataset.name,
        "classifier_fingerprint": classifier_print,
        "autoencoder_fingerprints": ae_prints,
        "validation_size": len(data.validation),
        "detectors": states,
        "reformer": config.defense.reformer.model_dump(mode="json"),
    }
    path = write_json(layout.defense_state, document)
    logger.info(f"✓ Calibration finished ({len(states)} detectors)")
    return path
