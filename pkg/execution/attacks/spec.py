"""
Declarative attack settings.
"""

from typing import Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


AttackMethod = Literal["fgsm", "iterative_linf", "iterative_l2", "deepfool_linf", "carlini_l2"]

# Defaults per method; None marks a required key.
METHOD_PARAMETERS: Dict[str, Dict[str, Optional[float]]] = {
    "fgsm": {"eps": None},
    "iterative_linf": {"eps": None, "step": None, "iters": 10},
    "iterative_l2": {"eps": None, "step": None, "iters": 10},
    "deepfool_linf": {"max_iters": 50, "overshoot": 0.02},
    "carlini_l2": {
        "kappa": 0.0,
        "initial_const": 1e-3,
        "binary_steps": 9,
        "iterations": 1000,
        "learning_rate": 0.01,
        "abort_early": 1,
    },
}

COUNT_PARAMETERS = ("iters", "max_iters", "binary_steps", "iterations")


class AttackSpec(BaseModel):
    """One attack run: method name plus its scalar parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: AttackMethod
    params: Dict[str, float] = Field(default_factory=dict)
    id: Optional[str] = None

    @field_validator("params")
    @classmethod
    def _non_negative(cls, params: Dict[str, float]) -> Dict[str, float]:
        for key, value in params.items():
            if value < 0:
                raise ValueError(f"parameter '{key}' must be >= 0, got {value}")
        return params

    @model_validator(mode="after")
    def _known_and_complete(self) -> "AttackSpec":
        allowed = METHOD_PARAMETERS[self.method]
        unknown = sorted(set(self.params) - set(allowed))
        if unknown:
            raise ValueError(f"unknown parameters for {self.method}: {', '.join(unknown)}")
        missing = [k for k, default in allowed.items() if default is None and k != "step" and k not in self.params]
        if missing:
            raise ValueError(f"{self.method} requires: {', '.join(missing)}")
        for key in COUNT_PARAMETERS:
            if key not in self.params:
                continue
            if self.params[key] < 1 or not float(self.params[key]).is_integer():
                raise ValueError(f"'{key}' must be a whole number >= 1, got {self.params[key]}")
        return self

    def resolved(self) -> Dict[str, float]:
        """Parameters with method defaults filled in (step defaults to eps / 5)."""
        params = {k: v for k, v in METHOD_PARAMETERS[self.method].items() if v is not None}
        params.update(self.params)
        if self.method.startswith("iterative") and "step" not in params:
            params["step"] = params["eps"] / 5.0
        return params

    @property
    def attack_id(self) -> str:
        if self.id:
            return self.id
        params = self.resolved()
        if self.method == "carlini_l2":
            return f"carlini_l2_kappa{params['kappa']:g}"
        if self.method == "deepfool_linf":
            return "deepfool_linf"
        return f"{self.method}_eps{params['eps']:g}"
