"""
The assembled defense: detectors, then reformer, then classifier.

An example flagged by any detector is rejected (REJECT); every other example
is reformed and classified. Evaluation counts a rejection as a correct
decision on adversarial inputs and as a mistake on normal ones.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from torch import nn

from execution.attacks.adversarial import AdversarialBatch
from execution.attacks.runner import run_attack
from execution.attacks.spec import AttackSpec
from execution.data.batch import ExampleBatch
from execution.defense.detectors import Detector
from execution.defense.diversity import Ensemble
from execution.defense.reformer import Reformer, reform
from execution.errors import ConfigurationError, DetectorStateError, EvaluationError
from execution.models.inference import classify
from execution.models.networks import Autoencoder, Classifier


REJECT = -1

NORM_OF_METHOD = {
    "fgsm": "linf",
    "iterative_linf": "linf",
    "iterative_l2": "l2",
    "deepfool_linf": "linf",
    "carlini_l2": "l2",
}


@dataclass
class DefensePipeline:
    classifier: Classifier
    detectors: List[Detector] = field(default_factory=list)
    reformer: Reformer = field(default_factory=Reformer.identity)
    classifier_fingerprint: Optional[str] = None
    dataset: Optional[str] = None

    def __repr__(self):
        return f"<DefensePipeline(detectors={[d.name for d in self.detectors]}, reformer={self.reformer!r})>"

    def check_calibrated(self) -> None:
        for detector in self.detectors:
            if not detector.calibrated:
                raise DetectorStateError(f"detector '{detector.name}' used before calibration")

    def without_reformer(self) -> "DefensePipeline":
        return DefensePipeline(self.classifier, self.detectors, Reformer.identity(), self.classifier_fingerprint, self.dataset)

    def without_detectors(self) -> "DefensePipeline":
        return DefensePipeline(self.classifier, [], self.reformer, self.classifier_fingerprint, self.dataset)


@dataclass
class DecisionTrace:
    """Per-example decisions plus what led to them."""

    decisions: np.ndarray
    flags: np.ndarray
    rejected: np.ndarray
    reformed_labels: np.ndarray


def decide_with_trace(p: DefensePipeline, batch: ExampleBatch, rng: Optional[np.random.Generator] = None) -> DecisionTrace:
    """
    Run the pipeline and keep the per-detector flags.

    Flags are computed on the raw input, so they do not depend on the reformer.
    """
    p.check_calibrated()
    count = len(batch)
    flags = np.zeros((len(p.detectors), count), dtype=bool)
    if count == 0:
        empty = np.zeros(0, dtype=np.int64)
        return DecisionTrace(empty, flags, np.zeros(0, dtype=bool), empty)

    for row, detector in enumerate(p.detectors):
        flags[row] = detector.detect(batch)
    rejected = flags.any(axis=0)

    _, _, reformed_labels = classify(p.classifier, reform(p.reformer, batch, rng))
    decisions = np.where(rejected, REJECT, reformed_labels).astype(np.int64)
    return DecisionTrace(decisions, flags, rejected, reformed_labels)


def magnet_decide(p: DefensePipeline, batch: ExampleBatch, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Per-example label, or REJECT when any detector flags the example."""
    return decide_with_trace(p, batch, rng).decisions


def correct_decision(decision: int, truth: int, is_adversarial: bool) -> bool:
    """
    Normal input: correct iff the decision is the true label.
    Adversarial input: correct iff rejected or the true label.
    """
    if is_adversarial and decision == REJECT:
        return True
    return decision == truth


def correct_decisions(decisions: np.ndarray, truths: np.ndarray, is_adversarial: bool) -> np.ndarray:
    decisions = np.asarray(decisions)
    correct = decisions == np.asarray(truths)
    if is_adversarial:
        correct |= decisions == REJECT
    return correct


def _rate(mask: np.ndarray) -> float:
    return float(np.mean(mask)) if mask.size else 0.0


def _detector_rates(p: DefensePipeline, trace: DecisionTrace) -> Dict[str, float]:
    """Share of examples each detector flags on its own."""
    return {detector.name: _rate(trace.flags[row]) for row, detector in enumerate(p.detectors)}


def _predict(classifier: nn.Module, batch: ExampleBatch) -> np.ndarray:
    if len(batch) == 0:
        return np.zeros(0, dtype=np.int64)
    return classify(classifier, batch)[2]


@dataclass
class NormalRow:
    count: int
    classifier_accuracy: float
    pipeline_accuracy: float
    false_reject_rate: float
    detector_reject_rates: Dict[str, float] = field(default_factory=dict)


@dataclass
class ReportRow:
    attack_id: str
    method: str
    params: Dict[str, float]
    count: int
    no_defense_accuracy: float
    with_defense_accuracy: float
    rejected_rate: float
    reformed_correct_rate: float
    attack_success_rate: float
    mean_l2: float
    mean_linf: float
    detector_reject_rates: Dict[str, float] = field(default_factory=dict)

    @property
    def norm(self) -> str:
        return NORM_OF_METHOD.get(self.method, "")


@dataclass
class EvaluationReport:
    normal: NormalRow
    rows: List[ReportRow] = field(default_factory=list)
    detectors: List[Dict[str, Any]] = field(default_factory=list)
    reformer: Dict[str, Any] = field(default_factory=dict)
    classifier_fingerprint: Optional[str] = None
    config: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classifier_fingerprint": self.classifier_fingerprint,
            "normal": asdict(self.normal),
            "attacks": [asdict(row) for row in self.rows],
            "detectors": self.detectors,
            "reformer": self.reformer,
            "config": self.config,
        }

    def to_frame(self) -> pd.DataFrame:
        """One row per adversarial set in generation order, normal examples last."""
        records = [
            {
                "attack": row.method,
                "norm": row.norm,
                "parameter": ", ".join(f"{k}={v:g}" for k, v in row.params.items() if k in ("eps", "kappa")),
                "count": row.count,
                "no_defense": row.no_defense_accuracy,
                "with_defense": row.with_defense_accuracy,
                "rejected": row.rejected_rate,
                "reformed_correct": row.reformed_correct_rate,
            }
            for row in self.rows
        ]
        records.append(
            {
                "attack": "normal",
                "norm": "",
                "parameter": "",
                "count": self.normal.count,
                "no_defense": self.normal.classifier_accuracy,
                "with_defense": self.normal.pipeline_accuracy,
                "rejected": self.normal.false_reject_rate,
                "reformed_correct": self.normal.pipeline_accuracy,
            }
        )
        return pd.DataFrame.from_records(records)

    def detector_frame(self) -> pd.DataFrame:
        """Rejection rate of each detector on its own, one row per example set."""
        index = [row.attack_id for row in self.rows] + ["normal"]
        rates = [row.detector_reject_rates for row in self.rows] + [self.normal.detector_reject_rates]
        return pd.DataFrame(rates, index=index)

    def to_text(self) -> str:
        frame = self.to_frame()
        percent = {c: "{:.1%}".format for c in ("no_defense", "with_defense", "rejected", "reformed_correct")}
        text = frame.to_string(index=False, formatters=percent)
        detectors = self.detector_frame()
        if detectors.shape[1]:
            text += "\n\nRejected by each detector:\n" + detectors.to_string(float_format="{:.1%}".format)
        return text


def evaluate(
    p: DefensePipeline,
    normal_test: ExampleBatch,
    adv_sets: Sequence[AdversarialBatch] = (),
    rng: Optional[np.random.Generator] = None,
) -> EvaluationReport:
    """
    Blackbox evaluation on normal examples and on each adversarial set.

    Raises:
        EvaluationError: an adversarial set was produced against another
            classifier or another dataset
    """
    for adv in adv_sets:
        if p.classifier_fingerprint and adv.classifier_fingerprint and adv.classifier_fingerprint != p.classifier_fingerprint:
            raise EvaluationError(
                f"adversarial set '{adv.attack_id}' was generated against classifier "
                f"{adv.classifier_fingerprint[:12]}, pipeline protects {p.classifier_fingerprint[:12]}"
            )
        if p.dataset and adv.dataset and adv.dataset != p.dataset:
            raise EvaluationError(f"adversarial set '{adv.attack_id}' is from dataset '{adv.dataset}', not '{p.dataset}'")

    rng = rng if rng is not None else np.random.default_rng(0)

    logger.info("=" * 60)
    logger.info(f"Evaluating {p!r} on {len(normal_test)} normal examples and {len(adv_sets)} adversarial sets")
    logger.info("=" * 60)

    plain = _predict(p.classifier, normal_test)
    trace = decide_with_trace(p, normal_test, rng)
    normal = NormalRow(
        count=len(normal_test),
        classifier_accuracy=_rate(plain == normal_test.labels),
        pipeline_accuracy=_rate(correct_decisions(trace.decisions, normal_test.labels, is_adversarial=False)),
        false_reject_rate=_rate(trace.rejected),
        detector_reject_rates=_detector_rates(p, trace),
    )
    logger.info(f"  normal: classifier {normal.classifier_accuracy:.2%}, pipeline {normal.pipeline_accuracy:.2%}, "
                f"false rejects {normal.false_reject_rate:.2%}")

    rows: List[ReportRow] = []
    for adv in adv_sets:
        batch = adv.as_batch()
        undefended = _predict(p.classifier, batch)
        trace = decide_with_trace(p, batch, rng)
        truth = batch.labels
        row = ReportRow(
            attack_id=adv.attack_id,
            method=adv.method,
            params=dict(adv.params),
            count=len(batch),
            no_defense_accuracy=_rate(undefended == truth),
            with_defense_accuracy=_rate(correct_decisions(trace.decisions, truth, is_adversarial=True)),
            rejected_rate=_rate(trace.rejected),
            reformed_correct_rate=_rate(~trace.rejected & (trace.reformed_labels == truth)),
            attack_success_rate=adv.success_rate,
            mean_l2=float(np.mean(adv.norms["l2"])) if len(adv) else 0.0,
            mean_linf=float(np.mean(adv.norms["linf"])) if len(adv) else 0.0,
            detector_reject_rates=_detector_rates(p, trace),
        )
        rows.append(row)
        logger.info(f"  {row.attack_id}: no defense {row.no_defense_accuracy:.2%}, with defense "
                    f"{row.with_defense_accuracy:.2%} (rejected {row.rejected_rate:.2%}, "
                    f"reformed {row.reformed_correct_rate:.2%})")

    return EvaluationReport(
        normal=normal,
        rows=rows,
        detectors=[d.to_dict() for d in p.detectors],
        reformer=p.reformer.to_dict(),
        classifier_fingerprint=p.classifier_fingerprint,
    )


def confidence_sweep(
    p: DefensePipeline,
    test: ExampleBatch,
    kappas: Sequence[float],
    attack_params: Optional[Dict[str, float]] = None,
    batch_size: int = 500,
) -> List[ReportRow]:
    """
    Carlini L2 at each confidence in `kappas`, evaluated through the pipeline.

    The rejected / reformed-correct split of each row shows which half of
    the defense handles low versus high confidence.
    """
    sets = []
    for kappa in kappas:
        spec = AttackSpec(method="carlini_l2", params={**(attack_params or {}), "kappa": float(kappa)})
        sets.append(run_attack(p.classifier, test, spec, batch_size, p.classifier_fingerprint, p.dataset))
    return evaluate(p, test, sets).rows


class ReformedClassifier(nn.Module):
    """classifier(ae(x)) as one differentiable module."""

    def __init__(self, classifier: Classifier, autoencoder: Autoencoder):
        super().__init__()
        self.classifier = classifier
        self.autoencoder = autoencoder
        self.input_shape = autoencoder.input_shape
        self.num_classes = classifier.num_classes

    def forward(self, x):
        return self.classifier(self.autoencoder(x))


@dataclass
class GrayboxMatrix:
    """
    Accuracy[i, j]: attack optimized through member j, defended by member i.
    The random row is the expected accuracy when the defending member is
    drawn uniformly, i.e. the mean of each column.
    """

    names: List[str]
    matrix: np.ndarray
    attack_id: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        n = len(self.names)
        if self.matrix.shape != (n, n):
            raise ConfigurationError(f"graybox matrix must be {n}x{n}, got {self.matrix.shape}")

    @property
    def random_row(self) -> np.ndarray:
        return self.matrix.mean(axis=0)

    @property
    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.matrix)))

    @property
    def off_diagonal_mean(self) -> float:
        n = len(self.names)
        if n < 2:
            return float("nan")
        return float(self.matrix[~np.eye(n, dtype=bool)].mean())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.matrix, index=self.names, columns=self.names)
        frame.loc["random"] = self.random_row
        frame.index.name = "defended_by"
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, float_format="%.6f")
        logger.info(f"Saved graybox matrix to {path}")
        return path


def graybox_matrix(
    ensemble: Ensemble,
    classifier: Classifier,
    attack: AttackSpec,
    test: ExampleBatch,
    batch_size: int = 500,
) -> GrayboxMatrix:
    """
    Reformer-only graybox evaluation over an ensemble.

    For each member j the attack is optimized against classifier(ae_j(x));
    the resulting examples are then reformed by every member i and classified.
    """
    if ensemble is None or not ensemble.members:
        raise ConfigurationError("graybox evaluation needs a non-empty ensemble")

    n = ensemble.n
    logger.info("=" * 60)
    logger.info(f"Graybox matrix: {n} members, attack {attack.attack_id}, {len(test)} examples")
    logger.info("=" * 60)

    reformers = [Reformer.from_autoencoder(member, name) for name, member in zip(ensemble.names, ensemble.members)]
    matrix = np.zeros((n, n), dtype=np.float64)
    for j, member in enumerate(ensemble.members):
        composite = ReformedClassifier(classifier, member)
        adv = run_attack(composite, test, attack, batch_size).as_batch()
        for i, reformer in enumerate(reformers):
            _, _, labels = classify(classifier, reform(reformer, adv))
            matrix[i, j] = _rate(correct_decisions(labels, adv.labels, is_adversarial=True))
        logger.info(f"  attacked through {ensemble.names[j]}: "
                    + ", ".join(f"{ensemble.names[i]}={matrix[i, j]:.1%}" for i in range(n)))

    result = GrayboxMatrix(ensemble.names, matrix, attack.attack_id)
    logger.info(f"✓ Graybox done: diagonal {result.diagonal_mean:.1%}, off-diagonal {result.off_diagonal_mean:.1%}")
    return result
