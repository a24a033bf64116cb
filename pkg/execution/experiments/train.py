"""
Train the classifier, the defense autoencoders and (optionally) the
diversity ensemble described by an experiment file.
"""

from pathlib import Path
from typing import Any, Dict

from loguru import logger

from execution.config import ExperimentConfig
from execution.defense.diversity import ensemble_normal_accuracy, save_ensemble, train_diverse_ensemble
from execution.experiments.common import RunLayout, load_data, on_device, write_json
from execution.models.archive import fingerprint, save_model
from execution.models.networks import build_autoencoder, build_classifier
from execution.models.training import train_autoencoder, train_classifier


def cmd_train(config: ExperimentConfig) -> Dict[str, Path]:
    """
    Train every model of the experiment and write their archives.

    Returns:
        Written paths by artifact name
    """
    layout = RunLayout.for_config(config)
    data = load_data(config)
    written: Dict[str, Path] = {}
    log: Dict[str, Any] = {"dataset": config.dataset.name, "base_seed": config.base_seed()}

    seed = config.seed_for("classifier")
    classifier = on_device(build_classifier(config.classifier.arch, seed=seed))
    train_classifier(classifier, data, config.classifier.training.model_copy(update={"seed": seed}))
    written["classifier"] = save_model(classifier, layout.classifier_path)
    log["classifier"] = {
        "arch": classifier.arch,
        "fingerprint": fingerprint(layout.classifier_path),
        "epochs": classifier.training_log,
    }

    log["autoencoders"] = {}
    for k, (name, ae_config) in enumerate(config.defense.autoencoders.items()):
        seed = config.seed_for("autoencoder", k)
        ae = on_device(build_autoencoder(ae_config.arch, input_shape=data.image_shape, seed=seed))
        train_autoencoder(ae, data, ae_config.training.model_copy(update={"seed": seed}), noise_sigma=ae_config.noise_sigma)
        path = save_model(ae, layout.autoencoder_path(name))
        written[f"ae_{name}"] = path
        log["autoencoders"][name] = {"arch": ae.arch, "fingerprint": fingerprint(path), "epochs": ae.training_log}

    if config.diversity is not None:
        div = config.diversity
        seed = config.seed_for("ensemble")
        ensemble = train_diverse_ensemble(
            [div.arch] * div.n,
            data,
            div.training.model_copy(update={"seed": seed}),
            alpha=div.alpha,
            pre_epochs=div.pre_epochs,
            div_epochs=div.div_epochs,
        )
        for member in ensemble.members:
            on_device(member)
        written["ensemble"] = save_ensemble(ensemble, layout.ensemble_dir)
        log["ensemble"] = {
            "alpha": div.alpha,
            "history": ensemble.history,
            "normal_accuracy": ensemble_normal_accuracy(ensemble, classifier, data.test),
        }

    written["training_log"] = write_json(layout.training_log, log)
    logger.info(f"✓ Training finished: {len(written)} artifacts in {layout.root}")
    return written
