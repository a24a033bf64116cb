"""
Tests for process settings and experiment-file validation.

Run with: pytest execution/test_config.py -v
"""

import copy
from pathlib import Path

import pytest

from execution.config import Settings, load_experiment_config, parse_experiment_config
from execution.errors import ConfigurationError


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = {
    "dataset": {
        "name": "mnist",
        "paths": {"source_dir": "data/mnist"},
        "train_size": 100,
        "validation_size": 20,
        "test_size": 20,
        "seed": 3,
    },
    "classifier": {"arch": "mnist", "training": {"epochs": 1}},
    "defense": {
        "autoencoders": {"I": {"arch": "mnist_I", "training": {"optimizer": "adam", "epochs": 1}}},
        "detectors": [{"kind": "reconstruction", "autoencoder": "I", "norm": 1, "t_fp": 0.01}],
        "reformer": {"kind": "autoencoder", "autoencoder": "I"},
    },
    "attacks": {"specs": [{"method": "fgsm", "params": {"eps": 0.1}}]},
}


def minimal(**changes):
    """Deep copy of the minimal config with dotted-path overrides ('a.b': value; None deletes)."""
    data = copy.deepcopy(MINIMAL)
    for dotted, value in changes.items():
        *parents, key = dotted.split(".")
        node = data
        for part in parents:
            node = node[int(part)] if isinstance(node, list) else node[part]
        if value is None:
            del node[key]
        elif isinstance(node, list):
            node[int(key)] = value
        else:
            node[key] = value
    return data


class TestShippedConfigs:

    @pytest.mark.parametrize("name", ["mnist.toml", "cifar10.toml", "fast.toml"])
    def test_parses(self, name):
        config = load_experiment_config(CONFIG_DIR / name)
        assert config.defense.detectors

    def test_mnist_reproduces_the_published_setup(self):
        config = load_experiment_config(CONFIG_DIR / "mnist.toml")
        assert (config.dataset.train_size, config.dataset.validation_size) == (55000, 5000)
        assert [d.norm for d in config.defense.detectors] == [1, 2]
        assert config.defense.reformer.autoencoder == "I"
        assert config.diversity is not None and config.diversity.n == 8

    def test_out_flag_overrides_output_dir(self, tmp_path):
        config = load_experiment_config(CONFIG_DIR / "fast.toml", output_dir=tmp_path / "run")
        assert config.output_dir == tmp_path / "run"


class TestValidation:

    def test_minimal_config_is_valid(self):
        config = parse_experiment_config(minimal())
        assert config.attacks.specs[0].attack_id == "fgsm_eps0.1"

    def test_missing_dataset_paths(self):
        with pytest.raises(ConfigurationError, match=r"^dataset\.paths: Field required"):
            parse_experiment_config(minimal(**{"dataset.paths": None}))

    def test_unknown_attack_method(self):
        with pytest.raises(ConfigurationError, match=r"attacks\.specs\.0\.method"):
            parse_experiment_config(minimal(**{"attacks.specs.0": {"method": "jsma", "params": {}}}))

    def test_t_fp_range(self):
        bad = minimal()
        bad["defense"]["detectors"][0]["t_fp"] = 1.5
        with pytest.raises(ConfigurationError, match="t_fp"):
            parse_experiment_config(bad)

    def test_unknown_autoencoder_reference(self):
        bad = minimal()
        bad["defense"]["detectors"][0]["autoencoder"] = "II"
        with pytest.raises(ConfigurationError, match="unknown autoencoder 'II'"):
            parse_experiment_config(bad)

    def test_arch_must_fit_dataset(self):
        with pytest.raises(ConfigurationError, match="does not fit"):
            parse_experiment_config(minimal(**{"classifier.arch": "cifar10"}))

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(ConfigurationError, match="classifier.epochs"):
            parse_experiment_config(minimal(**{"classifier.epochs": 3}))

    def test_duplicate_attack_ids(self):
        spec = {"method": "fgsm", "params": {"eps": 0.1}}
        bad = minimal(**{"attacks.specs": [spec, spec]})
        with pytest.raises(ConfigurationError, match="duplicate"):
            parse_experiment_config(bad)

    def test_unreadable_files(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_experiment_config(tmp_path / "missing.toml")
        broken = tmp_path / "broken.toml"
        broken.write_text("[dataset\nname = ")
        with pytest.raises(ConfigurationError):
            load_experiment_config(broken)


class TestSeeds:

    def test_seed_override_from_environment(self, monkeypatch):
        config = parse_experiment_config(minimal())
        assert config.base_seed() == 3

        monkeypatch.setenv("MAGNET_SEED", "99")
        assert config.base_seed() == 99
        assert config.seed_for("classifier") == 100
        assert config.resolved_dict()["dataset"]["seed"] == 99

    def test_consumers_get_distinct_seeds(self):
        config = parse_experiment_config(minimal())
        seeds = {config.seed_for(name) for name in ("classifier", "autoencoder", "ensemble", "evaluation")}
        assert len(seeds) == 4

    def test_settings_defaults(self, monkeypatch):
        monkeypatch.delenv("MAGNET_DEVICE", raising=False)
        assert Settings(_env_file=None).device == "cpu"

    def test_data_dir_from_environment(self, monkeypatch):
        monkeypatch.setenv("MAGNET_DATA_DIR", "/datasets/mnist")
        assert Settings(_env_file=None).data_dir == "/datasets/mnist"


class TestResolvedConfig:

    @pytest.mark.parametrize("name", ["mnist.toml", "cifar10.toml", "fast.toml"])
    def test_report_config_parses_back_to_itself(self, name, monkeypatch):
        monkeypatch.setenv("MAGNET_SEED", "21")
        resolved = load_experiment_config(CONFIG_DIR / name).resolved_dict()
        reparsed = parse_experiment_config(copy.deepcopy(resolved))
        assert reparsed.resolved_dict() == resolved
        assert reparsed.dataset.seed == 21
