"""
Graybox evaluation of the diversity ensemble (reformer only, no detectors).
"""

from pathlib import Path

from loguru import logger

from execution.config import ExperimentConfig
from execution.defense.diversity import ensemble_normal_accuracy, load_ensemble
from execution.defense.pipeline import graybox_matrix
from execution.errors import ConfigurationError
from execution.experiments.common import RunLayout, load_classifier, load_data, on_device, write_json


def cmd_graybox(config: ExperimentConfig) -> Path:
    """Write reports/graybox.csv (matrix plus random row) and graybox.json."""
    if config.diversity is None:
        raise ConfigurationError("diversity: block required for graybox evaluation")

    layout = RunLayout.for_config(config)
    data = load_data(config)
    classifier, classifier_print = load_classifier(config, layout)
    ensemble = load_ensemble(layout.ensemble_dir)
    for member in ensemble.members:
        on_device(member)

    subset = data.test.take(config.diversity.subset_size)
    matrix = graybox_matrix(ensemble, classifier, config.diversity.attack, subset, batch_size=config.attacks.batch_size)
    path = matrix.to_csv(layout.reports_dir / "graybox.csv")

    write_json(
        layout.reports_dir / "graybox.json",
        {
            "classifier_fingerprint": classifier_print,
            "attack": matrix.attack_id,
            "members": matrix.names,
            "matrix": matrix.matrix.tolist(),
            "random": matrix.random_row.tolist(),
            "diagonal_mean": matrix.diagonal_mean,
            "off_diagonal_mean": matrix.off_diagonal_mean,
            "normal_accuracy": ensemble_normal_accuracy(ensemble, classifier, data.test),
            "config": config.resolved_dict(),
        },
    )
    print(matrix.to_frame().to_string(float_format="{:.1%}".format))
    logger.info(f"✓ Graybox evaluation finished ({ensemble.n} members)")
    return path
