"""
Configuration management for the MagNet defense toolkit.

Two layers:
- Settings: process-level options from environment variables (prefix
  MAGNET_) and an optional .env file
- ExperimentConfig: the declarative experiment file (TOML) describing the
  dataset, models, detectors, reformer, attacks and diversity ensemble
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import torch
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from execution.attacks.spec import AttackSpec
from execution.errors import ConfigurationError
from execution.models.networks import AUTOENCODER_INPUT_SHAPES, CLASSIFIER_ARCHITECTURES
from execution.models.training import TrainingConfig


# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_prefix="MAGNET_", env_file=".env", case_sensitive=False, extra="ignore")

    # Overrides dataset.seed of every experiment file
    seed: Optional[int] = None

    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Torch runtime
    device: str = "cpu"
    num_threads: Optional[int] = None
    deterministic: bool = True

    # Raw dataset files for the real-data test suite
    data_dir: Optional[str] = None


# Global settings instance
settings = Settings()


def apply_runtime_settings(current: Optional[Settings] = None) -> None:
    """Push thread count and determinism flags into torch."""
    current = current or settings
    if current.num_threads:
        torch.set_num_threads(current.num_threads)
    torch.use_deterministic_algorithms(current.deterministic, warn_only=True)


# Derived seeds are base seed + fixed offset, one offset per consumer.
SEED_OFFSETS = {
    "classifier": 1,
    "autoencoder": 100,
    "ensemble": 200,
    "evaluation": 400,
}


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetPaths(_Block):
    source_dir: Path
    sha256: Dict[str, str] = Field(default_factory=dict)


class DatasetConfig(_Block):
    name: Literal["mnist", "cifar10"]
    paths: DatasetPaths
    train_size: int = Field(ge=1)
    validation_size: int = Field(ge=1)
    test_size: int = Field(ge=1)
    seed: int = 0


class ClassifierConfig(_Block):
    arch: str
    training: TrainingConfig

    @field_validator("arch")
    @classmethod
    def _known_arch(cls, arch: str) -> str:
        if arch not in CLASSIFIER_ARCHITECTURES:
            raise ValueError(f"unknown classifier arch '{arch}', expected one of {sorted(CLASSIFIER_ARCHITECTURES)}")
        return arch


class AutoencoderConfig(_Block):
    arch: str
    training: TrainingConfig
    noise_sigma: float = Field(default=0.0, ge=0.0)

    @field_validator("arch")
    @classmethod
    def _known_arch(cls, arch: str) -> str:
        if arch not in AUTOENCODER_INPUT_SHAPES:
            raise ValueError(f"unknown autoencoder arch '{arch}', expected one of {sorted(AUTOENCODER_INPUT_SHAPES)}")
        return arch


class DetectorConfig(_Block):
    kind: Literal["reconstruction", "divergence"]
    autoencoder: str
    t_fp: float = Field(ge=0.0, le=1.0)
    norm: Optional[Literal[1, 2]] = None
    temperature: Optional[float] = None
    name: Optional[str] = None

    @model_validator(mode="after")
    def _kind_fields(self) -> "DetectorConfig":
        if self.kind == "reconstruction" and self.norm is None:
            raise ValueError("reconstruction detectors need 'norm' (1 or 2)")
        if self.kind == "divergence" and (self.temperature is None or self.temperature <= 1):
            raise ValueError("divergence detectors need 'temperature' > 1")
        return self

    @property
    def detector_name(self) -> str:
        if self.name:
            return self.name
        if self.kind == "reconstruction":
            return f"reconstruction_l{self.norm}_{self.autoencoder}"
        return f"divergence_T{self.temperature:g}_{self.autoencoder}"


class ReformerConfig(_Block):
    kind: Literal["identity", "noise", "autoencoder", "ensemble"] = "autoencoder"
    autoencoder: Optional[str] = None
    epsilon: float = Field(default=0.1, ge=0.0)
    per_example: bool = False


class DefenseConfig(_Block):
    autoencoders: Dict[str, AutoencoderConfig]
    detectors: List[DetectorConfig] = Field(default_factory=list)
    reformer: ReformerConfig = Field(default_factory=ReformerConfig)

    @model_validator(mode="after")
    def _references(self) -> "DefenseConfig":
        for detector in self.detectors:
            if detector.autoencoder not in self.autoencoders:
                raise ValueError(f"detector references unknown autoencoder '{detector.autoencoder}'")
        if self.reformer.kind == "autoencoder":
            if self.reformer.autoencoder is None:
                raise ValueError("autoencoder reformer needs 'autoencoder'")
            if self.reformer.autoencoder not in self.autoencoders:
                raise ValueError(f"reformer references unknown autoencoder '{self.reformer.autoencoder}'")
        names = [d.detector_name for d in self.detectors]
        if len(names) != len(set(names)):
            raise ValueError("detector names must be unique")
        return self


class AttacksConfig(_Block):
    subset_size: Optional[int] = Field(default=None, ge=1)
    batch_size: int = Field(default=500, ge=1)
    specs: List[AttackSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self) -> "AttacksConfig":
        ids = [spec.attack_id for spec in self.specs]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"duplicate attack ids: {', '.join(duplicates)}")
        return self


class DiversityConfig(_Block):
    n: int = Field(default=8, ge=1, le=26)
    arch: str = "diverse"
    alpha: float = Field(default=0.2, ge=0.0)
    pre_epochs: int = Field(default=3, ge=0)
    div_epochs: int = Field(default=10, ge=0)
    training: TrainingConfig = Field(default_factory=lambda: TrainingConfig(optimizer="adam", learning_rate=0.001, batch_size=256, epochs=1))
    attack: AttackSpec = Field(default_factory=lambda: AttackSpec(method="carlini_l2", params={"kappa": 0.0}))
    subset_size: int = Field(default=200, ge=1)

    @field_validator("arch")
    @classmethod
    def _known_arch(cls, arch: str) -> str:
        if arch not in AUTOENCODER_INPUT_SHAPES:
            raise ValueError(f"unknown autoencoder arch '{arch}'")
        return arch


class ExperimentConfig(_Block):
    dataset: DatasetConfig
    classifier: ClassifierConfig
    defense: DefenseConfig
    attacks: AttacksConfig = Field(default_factory=AttacksConfig)
    diversity: Optional[DiversityConfig] = None
    output_dir: Path = Path("out")

    @model_validator(mode="after")
    def _dataset_matches(self) -> "ExperimentConfig":
        if self.dataset.name not in self.classifier.arch:
            raise ValueError(f"classifier arch '{self.classifier.arch}' does not fit dataset '{self.dataset.name}'")
        if self.defense.reformer.kind == "ensemble" and self.diversity is None:
            raise ValueError("ensemble reformer needs a [diversity] block")
        return self

    def base_seed(self, current: Optional[Settings] = None) -> int:
        """dataset.seed unless MAGNET_SEED overrides it."""
        current = current or Settings()
        return current.seed if current.seed is not None else self.dataset.seed

    def seed_for(self, consumer: str, index: int = 0) -> int:
        return self.base_seed() + SEED_OFFSETS[consumer] + index

    def resolved_dict(self) -> Dict[str, Any]:
        """Fully-resolved config (seed override applied), embedded in reports."""
        data = self.model_dump(mode="json")
        data["dataset"]["seed"] = self.base_seed()
        data["attacks"]["specs"] = [{**spec.model_dump(mode="json"), "params": spec.resolved()} for spec in self.attacks.specs]
        return data


def format_validation_error(error: ValidationError) -> str:
    """First validation problem as 'dotted.key: message'."""
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"])
    message = first["msg"].removeprefix("Value error, ")
    extra = f" (+{error.error_count() - 1} more)" if error.error_count() > 1 else ""
    return f"{location}: {message}{extra}" if location else f"{message}{extra}"


def parse_experiment_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(format_validation_error(e)) from e


def load_experiment_config(path: Union[str, Path], output_dir: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """
    Read and validate an experiment file.

    Args:
        path: TOML file
        output_dir: overrides the file's output_dir (the --out flag)

    Raises:
        ConfigurationError: unreadable file or invalid content, naming the offending key
    """
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigurationError(f"{path}: config file not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from e

    if output_dir is not None:
        data["output_dir"] = str(output_dir)
    return parse_experiment_config(data)
