"""
Artifact layout of one experiment output directory and the loaders shared
by every command.

    <out>/
      run.log
      training_log.json
      defense_state.json
      models/classifier.magnet
      models/ae_<name>.magnet
      ensemble/manifest.json, member_<X>.magnet
      attacks/<attack id>.npy, <attack id>.json
      reports/report.json, report.txt, graybox.csv, graybox.json
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Tuple, TypeVar

import torch
from loguru import logger
from torch import nn

from execution.config import ExperimentConfig, settings
from execution.data.batch import DatasetSplits, ExampleBatch
from execution.data.datasets import load_dataset
from execution.errors import SerializationError
from execution.models.archive import fingerprint, load_model
from execution.models.networks import Autoencoder, Classifier


ModelT = TypeVar("ModelT", bound=nn.Module)


@dataclass(frozen=True)
class RunLayout:
    root: Path

    @classmethod
    def for_config(cls, config: ExperimentConfig) -> "RunLayout":
        return cls(Path(config.output_dir))

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def classifier_path(self) -> Path:
        return self.models_dir / "classifier.magnet"

    def autoencoder_path(self, name: str) -> Path:
        return self.models_dir / f"ae_{name}.magnet"

    @property
    def ensemble_dir(self) -> Path:
        return self.root / "ensemble"

    @property
    def attacks_dir(self) -> Path:
        return self.root / "attacks"

    def attack_sidecar(self, attack_id: str) -> Path:
        return self.attacks_dir / f"{attack_id}.json"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def defense_state(self) -> Path:
        return self.root / "defense_state.json"

    @property
    def training_log(self) -> Path:
        return self.root / "training_log.json"

    @property
    def run_log(self) -> Path:
        return self.root / "run.log"


def load_data(config: ExperimentConfig) -> DatasetSplits:
    ds = config.dataset
    return load_dataset(
        ds.name,
        ds.paths.source_dir,
        (ds.train_size, ds.validation_size, ds.test_size),
        seed=config.base_seed(),
        checksums=ds.paths.sha256,
    )


def attack_subset(config: ExperimentConfig, test: ExampleBatch) -> ExampleBatch:
    """Leading slice of the (already shuffled) test split used for attacks."""
    size = config.attacks.subset_size
    return test if size is None else test.take(size)


def load_classifier(config: ExperimentConfig, layout: RunLayout) -> Tuple[Classifier, str]:
    """Trained classifier plus the fingerprint of its archive."""
    path = layout.classifier_path
    if not path.exists():
        raise SerializationError(f"{path}: classifier archive missing, run 'train' first")
    model = on_device(load_model(path, expected_arch=config.classifier.arch, expected_kind="classifier"))
    return model, fingerprint(path)


def load_autoencoders(config: ExperimentConfig, layout: RunLayout) -> Tuple[Dict[str, Autoencoder], Dict[str, str]]:
    """Trained defense autoencoders by config name, plus their fingerprints."""
    models: Dict[str, Autoencoder] = {}
    prints: Dict[str, str] = {}
    for name, ae_config in config.defense.autoencoders.items():
        path = layout.autoencoder_path(name)
        if not path.exists():
            raise SerializationError(f"{path}: autoencoder archive missing, run 'train' first")
        models[name] = on_device(load_model(path, expected_arch=ae_config.arch, expected_kind="autoencoder"))
        prints[name] = fingerprint(path)
    return models, prints


def write_json(path: Path, document: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2))
    logger.info(f"Wrote {path}")
    return path


def read_json(path: Path, missing_hint: str) -> Dict[str, Any]:
    if not path.exists():
        raise SerializationError(f"{path}: not found, {missing_hint}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SerializationError(f"{path}: unreadable ({e})") from e


def on_device(model: ModelT) -> ModelT:
    """Move a model onto the configured torch device."""
    return model.to(torch.device(settings.device))
