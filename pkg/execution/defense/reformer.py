"""
Reformers move inputs toward the manifold of normal examples before they
reach the classifier.
"""

from dataclasses import dataclass
from typing import Any, Dict, Literal, Optional

import numpy as np

from execution.data.batch import ExampleBatch
from execution.defense.diversity import Ensemble, reform_with_ensemble
from execution.errors import ConfigurationError
from execution.models.inference import reconstruct
from execution.models.networks import Autoencoder


ReformerKind = Literal["identity", "noise", "autoencoder", "ensemble"]


@dataclass
class Reformer:
    """
    identity: r(x) = x
    noise: r(x) = clip(x + epsilon * N(0, 1), 0, 1)   (ablation only)
    autoencoder: r(x) = ae(x)
    ensemble: r(x) = ae_k(x) with k drawn uniformly per call, or per example
    """

    kind: ReformerKind = "identity"
    epsilon: float = 0.0
    autoencoder: Optional[Autoencoder] = None
    autoencoder_name: Optional[str] = None
    ensemble: Optional[Ensemble] = None
    per_example: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "noise", "autoencoder", "ensemble"):
            raise ConfigurationError(f"unknown reformer kind '{self.kind}'")
        if self.kind == "noise" and self.epsilon < 0:
            raise ConfigurationError(f"noise reformer epsilon must be >= 0, got {self.epsilon}")
        if self.kind == "autoencoder" and self.autoencoder is None:
            raise ConfigurationError("autoencoder reformer needs an autoencoder")
        if self.kind == "ensemble" and self.ensemble is None:
            raise ConfigurationError("ensemble reformer needs an ensemble")

    def __repr__(self):
        detail = {
            "noise": f", epsilon={self.epsilon}",
            "autoencoder": f", ae='{self.autoencoder_name}'",
            "ensemble": f", n={self.ensemble.n if self.ensemble else 0}, per_example={self.per_example}",
        }
        return f"<Reformer(kind='{self.kind}'{detail.get(self.kind, '')})>"

    @classmethod
    def identity(cls) -> "Reformer":
        return cls("identity")

    @classmethod
    def noise(cls, epsilon: float) -> "Reformer":
        return cls("noise", epsilon=epsilon)

    @classmethod
    def from_autoencoder(cls, autoencoder: Autoencoder, name: Optional[str] = None) -> "Reformer":
        return cls("autoencoder", autoencoder=autoencoder, autoencoder_name=name or autoencoder.arch)

    @classmethod
    def from_ensemble(cls, ensemble: Ensemble, per_example: bool = False) -> "Reformer":
        return cls("ensemble", ensemble=ensemble, per_example=per_example)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind, "epsilon": self.epsilon, "autoencoder": self.autoencoder_name}
        if self.kind == "ensemble":
            data.update({"members": self.ensemble.names, "alpha": self.ensemble.alpha, "per_example": self.per_example})
        return data


def reform(r: Reformer, batch: ExampleBatch, rng: Optional[np.random.Generator] = None) -> ExampleBatch:
    """
    Apply a reformer to a batch.

    Args:
        r: reformer
        batch: inputs
        rng: generator for the noise and ensemble reformers (a fixed seed
            gives a fixed output)

    Returns:
        Batch of the same shape with values in [0, 1]
    """
    if r.kind == "identity" or len(batch) == 0:
        return batch

    rng = rng if rng is not None else np.random.default_rng()
    if r.kind == "noise":
        if r.epsilon == 0:
            return batch
        noise = rng.standard_normal(batch.images.shape).astype(np.float32)
        return batch.with_images(np.clip(batch.images + r.epsilon * noise, 0.0, 1.0))

    if r.kind == "ensemble":
        return reform_with_ensemble(r.ensemble, batch, rng, per_example=r.per_example)

    return batch.with_images(np.clip(reconstruct(r.autoencoder, batch), 0.0, 1.0))
