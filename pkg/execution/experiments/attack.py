"""
Generate the configured adversarial sets against the trained classifier.
"""

from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger

from execution.attacks.adversarial import save_adversarial
from execution.attacks.runner import run_attack
from execution.config import ExperimentConfig
from execution.errors import ConfigurationError
from execution.experiments.common import RunLayout, attack_subset, load_classifier, load_data
from execution.models.inference import accuracy


def cmd_attack(config: ExperimentConfig, only: Optional[Sequence[str]] = None) -> List[Path]:
    """
    Run each attack of the experiment (or the ids in `only`) and save the artifacts.

    Raises:
        ConfigurationError: `only` names an attack id the config does not define
    """
    specs = list(config.attacks.specs)
    if only:
        known = {spec.attack_id: spec for spec in specs}
        unknown = [attack_id for attack_id in only if attack_id not in known]
        if unknown:
            raise ConfigurationError(f"attacks.specs: unknown attack id(s) {', '.join(unknown)}")
        specs = [known[attack_id] for attack_id in only]

    layout = RunLayout.for_config(config)
    data = load_data(config)
    classifier, classifier_print = load_classifier(config, layout)
    subset = attack_subset(config, data.test)

    logger.info("=" * 60)
    logger.info(f"Generating {len(specs)} adversarial sets on {len(subset)} test examples")
    logger.info("=" * 60)

    written: List[Path] = []
    for spec in specs:
        adv = run_attack(
            classifier,
            subset,
            spec,
            batch_size=config.attacks.batch_size,
            classifier_fingerprint=classifier_print,
            dataset=config.dataset.name,
        )
        written.append(save_adversarial(adv, layout.attacks_dir))
        print(f"{spec.attack_id}: undefended accuracy {accuracy(classifier, adv.as_batch()):.1%}")

    logger.info(f"✓ Wrote {len(written)} adversarial sets to {layout.attacks_dir}")
    return written
