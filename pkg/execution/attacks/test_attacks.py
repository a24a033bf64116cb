"""
Tests for the attack implementations, attack specs and adversarial artifacts.

Run with: pytest execution/attacks/test_attacks.py -v
"""

import numpy as np
import pytest
import torch
from pydantic import ValidationError
from torch import nn

from execution.attacks import (
    AttackSpec,
    carlini_l2,
    deepfool_linf,
    fgsm,
    iterative_attack,
    load_adversarial,
    run_attack,
    save_adversarial,
)
from execution.data.batch import ExampleBatch
from execution.errors import ConfigurationError, EvaluationError
from execution.models import accuracy, carlini_objective, classify
from execution.models.inference import forward_numpy


class SumClassifier(nn.Module):
    """Two logits (-s, s) with s the pixel sum; cross-entropy on label 0 grows with every pixel."""

    input_shape = (4, 4, 1)

    def __init__(self):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(()))

    def forward(self, x):
        s = self.scale * x.flatten(1).sum(dim=1)
        return torch.stack([-s, s], dim=1)


@pytest.fixture
def attack_batch(blob_splits):
    return blob_splits.test.take(40)


# ==================== FGSM and iterative ====================

class TestGradientAttacks:

    def test_zero_budget_is_identity(self, trained_classifier, attack_batch):
        adv = fgsm(trained_classifier, attack_batch, 0.0)
        assert np.array_equal(adv.perturbed, attack_batch.images)

    def test_positive_gradient_moves_every_pixel_by_eps(self):
        batch = ExampleBatch(np.full((3, 4, 4, 1), 0.5), np.zeros(3), 2)
        adv = fgsm(SumClassifier(), batch, 0.01)
        assert np.allclose(adv.perturbed - batch.images, 0.01, atol=1e-6)

    def test_fgsm_equals_one_step_iterative(self, trained_classifier, attack_batch):
        single = fgsm(trained_classifier, attack_batch, 0.1)
        one_step = iterative_attack(trained_classifier, attack_batch, "linf", 0.1, step=0.1, iters=1)
        assert np.array_equal(single.perturbed, one_step.perturbed)

    @pytest.mark.parametrize("norm,eps", [("linf", 0.1), ("l2", 1.0)])
    def test_iterative_respects_budget(self, trained_classifier, attack_batch, norm, eps):
        adv = iterative_attack(trained_classifier, attack_batch, norm, eps, iters=5)
        assert np.all(adv.norms[norm] <= eps + 1e-6)
        assert 0.0 <= adv.perturbed.min() and adv.perturbed.max() <= 1.0
        assert adv.params["step"] == pytest.approx(eps / 5)

    def test_success_means_label_changed(self, trained_classifier, attack_batch):
        adv = iterative_attack(trained_classifier, attack_batch, "linf", 0.3, iters=10)
        predicted = classify(trained_classifier, adv.as_batch())[2]
        assert np.array_equal(adv.success, predicted != attack_batch.labels)

    def test_accuracy_drops_as_budget_grows(self, trained_classifier, attack_batch):
        accuracies = [accuracy(trained_classifier, fgsm(trained_classifier, attack_batch, eps).as_batch())
                      for eps in (0.0, 0.05, 0.1, 0.2)]
        assert all(later <= earlier + 0.1 for earlier, later in zip(accuracies, accuracies[1:]))
        assert accuracies[-1] < accuracies[0]

    def test_chunking_does_not_change_results(self, trained_classifier, attack_batch):
        whole = fgsm(trained_classifier, attack_batch, 0.1)
        chunked = fgsm(trained_classifier, attack_batch, 0.1, batch_size=7)
        assert np.allclose(whole.perturbed, chunked.perturbed)

    def test_rejects_bad_arguments(self, trained_classifier, attack_batch):
        with pytest.raises(ConfigurationError):
            fgsm(trained_classifier, attack_batch, -0.1)
        with pytest.raises(ConfigurationError):
            iterative_attack(trained_classifier, attack_batch, "l1", 0.1)


# ==================== DeepFool ====================

class TestDeepFool:

    def test_misclassified_inputs_come_back_unchanged(self, trained_classifier, attack_batch):
        predicted = classify(trained_classifier, attack_batch)[2]
        wrong = ExampleBatch(attack_batch.images, (predicted + 1) % 10, 10, attack_batch.indices)

        adv = deepfool_linf(trained_classifier, wrong)
        assert np.array_equal(adv.perturbed, wrong.images)
        assert adv.success.all()

    def test_flips_labels_with_small_perturbations(self, trained_classifier, attack_batch):
        adv = deepfool_linf(trained_classifier, attack_batch, max_iters=50)
        assert adv.success_rate > 0.5
        predicted = classify(trained_classifier, adv.as_batch())[2]
        assert np.array_equal(adv.success, predicted != attack_batch.labels)
        flipped = adv.success & (classify(trained_classifier, attack_batch)[2] == attack_batch.labels)
        assert np.all(adv.norms["linf"][flipped] > 0.0)


# ==================== Carlini-Wagner L2 ====================

class TestCarlini:

    def test_objective_is_positive_on_correct_inputs(self, trained_classifier, attack_batch):
        logits = torch.tensor(forward_numpy(trained_classifier, attack_batch))
        labels = torch.tensor(attack_batch.labels)
        correct = logits.argmax(dim=1) == labels
        assert torch.all(carlini_objective(logits, labels, 0.0)[correct] > 0)

    def test_success_is_sound(self, trained_classifier, attack_batch):
        kappa = 1.0
        adv = carlini_l2(trained_classifier, attack_batch.take(20), kappa=kappa, c_search=(1e-1, 3), opt=(60, 0.05))
        originals = adv.originals

        assert 0.0 <= adv.perturbed.min() and adv.perturbed.max() <= 1.0
        assert np.array_equal(adv.perturbed[~adv.success], originals.images[~adv.success])

        logits = torch.tensor(forward_numpy(trained_classifier, adv.perturbed))
        hinge = carlini_objective(logits, torch.tensor(originals.labels), kappa).numpy()
        assert np.all(hinge[adv.success] <= -kappa + 1e-4)
        assert np.all(logits.argmax(dim=1).numpy()[adv.success] != originals.labels[adv.success])

    def test_rejects_negative_kappa(self, trained_classifier, attack_batch):
        with pytest.raises(ConfigurationError):
            carlini_l2(trained_classifier, attack_batch, kappa=-1.0)


# ==================== Specs and runner ====================

class TestAttackSpec:

    def test_defaults_and_ids(self):
        assert AttackSpec(method="iterative_l2", params={"eps": 2.0}).resolved() == {"eps": 2.0, "step": 0.4, "iters": 10}
        assert AttackSpec(method="fgsm", params={"eps": 0.05}).attack_id == "fgsm_eps0.05"
        assert AttackSpec(method="carlini_l2", params={"kappa": 20}).attack_id == "carlini_l2_kappa20"
        assert AttackSpec(method="deepfool_linf").attack_id == "deepfool_linf"
        assert AttackSpec(method="fgsm", params={"eps": 0.1}, id="custom").attack_id == "custom"

    @pytest.mark.parametrize(
        "method,params",
        [
            ("fgsm", {"eps": -0.1}),
            ("fgsm", {}),
            ("fgsm", {"eps": 0.1, "kappa": 1.0}),
            ("iterative_linf", {"eps": 0.1, "iters": 0}),
            ("iterative_linf", {"eps": 0.1, "iters": 2.5}),
            ("carlini_l2", {"binary_steps": 1.5}),
            ("jsma", {"eps": 0.1}),
        ],
    )
    def test_invalid_specs(self, method, params):
        with pytest.raises(ValidationError):
            AttackSpec(method=method, params=params)

    def test_runner_records_provenance(self, trained_classifier, attack_batch):
        spec = AttackSpec(method="iterative_linf", params={"eps": 0.05, "iters": 2})
        adv = run_attack(trained_classifier, attack_batch, spec, classifier_fingerprint="f00d", dataset="blobs")
        assert adv.attack_id == "iterative_linf_eps0.05"
        assert adv.classifier_fingerprint == "f00d"
        assert adv.dataset == "blobs"
        assert adv.params["iters"] == 2


class TestArtifacts:

    def test_save_and_reload_against_test_split(self, trained_classifier, blob_splits, tmp_path):
        adv = fgsm(trained_classifier, blob_splits.test.take(10), 0.1)
        sidecar = save_adversarial(adv, tmp_path)

        loaded = load_adversarial(sidecar, blob_splits.test)
        assert np.array_equal(loaded.perturbed, adv.perturbed)
        assert np.array_equal(loaded.success, adv.success)
        assert np.array_equal(loaded.originals.indices, adv.originals.indices)

    def test_missing_originals(self, trained_classifier, blob_splits, tmp_path):
        adv = fgsm(trained_classifier, blob_splits.test.take(10), 0.1)
        sidecar = save_adversarial(adv, tmp_path)
        with pytest.raises(EvaluationError):
            load_adversarial(sidecar, blob_splits.validation)
