"""
Network definitions for the protected classifiers and the defensive autoencoders.

Architectures are described as plain layer-spec lists so that the same
description drives model construction and the library-agnostic layer list
stored in model archives. Every network takes channels-last batches
[count, height, width, channels] and converts to torch's layout internally.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from execution.errors import ConfigurationError, InputShapeError


ACTIVATIONS = {
    "relu": nn.ReLU,
    "sigmoid": nn.Sigmoid,
    "tanh": nn.Tanh,
}

LAYER_KINDS = ("conv", "max_pool", "avg_pool", "upsample", "flatten", "dense", "global_avg_pool")


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of an architecture.

    `units` is the filter count (conv) or width (dense); `size` is the kernel
    size (conv) or window / scale factor (pooling, upsampling).
    """

    kind: str
    units: int = 0
    size: int = 0
    activation: str = "linear"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        return cls(**data)


def conv(filters: int, size: int = 3, activation: str = "relu") -> LayerSpec:
    return LayerSpec("conv", units=filters, size=size, activation=activation)


def dense(units: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec("dense", units=units, activation=activation)


def max_pool(size: int = 2) -> LayerSpec:
    return LayerSpec("max_pool", size=size)


def avg_pool(size: int = 2) -> LayerSpec:
    return LayerSpec("avg_pool", size=size)


def upsample(size: int = 2) -> LayerSpec:
    return LayerSpec("upsample", size=size)


FLATTEN = LayerSpec("flatten")
GLOBAL_AVG_POOL = LayerSpec("global_avg_pool")


CLASSIFIER_ARCHITECTURES: Dict[str, Tuple[Tuple[int, int, int], List[LayerSpec]]] = {
    "mnist": (
        (28, 28, 1),
        [
            conv(32), conv(32), max_pool(),
            conv(64), conv(64), max_pool(),
            FLATTEN, dense(200), dense(200), dense(10, "linear"),
        ],
    ),
    "cifar10": (
        (32, 32, 3),
        [
            conv(96), conv(96), conv(96), max_pool(),
            conv(192), conv(192), conv(192), max_pool(),
            conv(192), conv(192, size=1), conv(10, size=1),
            GLOBAL_AVG_POOL,
        ],
    ),
}


def _autoencoder_layers(arch: str, channels: int) -> List[LayerSpec]:
    if arch == "mnist_I":
        return [
            conv(3, activation="sigmoid"), avg_pool(),
            conv(3, activation="sigmoid"),
            conv(3, activation="sigmoid"), upsample(),
            conv(3, activation="sigmoid"),
            conv(channels, activation="sigmoid"),
        ]
    if arch in ("mnist_II", "cifar"):
        return [conv(3, activation="sigmoid"), conv(3, activation="sigmoid"), conv(channels, activation="sigmoid")]
    if arch == "diverse":
        return [conv(8, activation="relu"), conv(8, activation="relu"), conv(channels, activation="sigmoid")]
    raise ConfigurationError(f"unknown autoencoder arch '{arch}', expected one of {tuple(AUTOENCODER_INPUT_SHAPES)}")


AUTOENCODER_INPUT_SHAPES: Dict[str, Tuple[int, int, int]] = {
    "mnist_I": (28, 28, 1),
    "mnist_II": (28, 28, 1),
    "cifar": (32, 32, 3),
    "diverse": (28, 28, 1),
}


def build_stack(layers: Sequence[LayerSpec], input_shape: Tuple[int, int, int]) -> Tuple[nn.Sequential, Tuple[int, ...]]:
    """
    Instantiate a layer-spec list.

    Args:
        layers: architecture description
        input_shape: (height, width, channels) of one example

    Returns:
        (torch module expecting NCHW input, output shape per example)
    """
    height, width, channels = input_shape
    shape: Tuple[int, ...] = (channels, height, width)
    modules: List[nn.Module] = []

    for spec in layers:
        if spec.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind '{spec.kind}'")

        if spec.kind == "conv":
            if len(shape) != 3:
                raise ConfigurationError("conv layer after flatten")
            modules.append(nn.Conv2d(shape[0], spec.units, spec.size, padding=spec.size // 2))
            shape = (spec.units, shape[1], shape[2])
        elif spec.kind == "max_pool":
            modules.append(nn.MaxPool2d(spec.size))
            shape = (shape[0], shape[1] // spec.size, shape[2] // spec.size)
        elif spec.kind == "avg_pool":
            modules.append(nn.AvgPool2d(spec.size))
            shape = (shape[0], shape[1] // spec.size, shape[2] // spec.size)
        elif spec.kind == "upsample":
            modules.append(nn.Upsample(scale_factor=spec.size, mode="nearest"))
            shape = (shape[0], shape[1] * spec.size, shape[2] * spec.size)
        elif spec.kind == "flatten":
            modules.append(nn.Flatten())
            shape = (int(torch.Size(shape).numel()),)
        elif spec.kind == "global_avg_pool":
            modules.append(nn.AdaptiveAvgPool2d(1))
            modules.append(nn.Flatten())
            shape = (shape[0],)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ConfigurationError("dense layer needs a flatten layer before it")
            modules.append(nn.Linear(shape[0], spec.units))
            shape = (spec.units,)

        if spec.activation != "linear":
            if spec.activation not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation '{spec.activation}'")
            modules.append(ACTIVATIONS[spec.activation]())

    return nn.Sequential(*modules), shape


class _ChannelsLastNetwork(nn.Module):
    """Shared plumbing: layer specs, input shape check and NHWC <-> NCHW conversion."""

    kind = "network"

    def __init__(self, arch: str, layers: Sequence[LayerSpec], input_shape: Tuple[int, int, int]):
        super().__init__()
        self.arch = arch
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.body, self.output_shape = build_stack(self.layers, self.input_shape)
        self.seed: Optional[int] = None
        self.training_config: Optional[Dict[str, Any]] = None
        self.training_log: List[Dict[str, Any]] = []

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise InputShapeError(f"{self.arch} expects [count, {self.input_shape}], got {tuple(x.shape)}")

    def _run(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.body(x.permute(0, 3, 1, 2))

    def __repr__(self):
        return f"<{type(self).__name__}(arch='{self.arch}', input={self.input_shape}, layers={len(self.layers)})>"


class Classifier(_ChannelsLastNetwork):
    """
    Target classifier: image batch -> logits [count, num_classes].

    Softmax is not part of the module; logits are the first-class output
    because the Carlini objective works on pre-softmax values.
    """

    kind = "classifier"

    def __init__(self, arch: str, layers: Sequence[LayerSpec], input_shape: Tuple[int, int, int], num_classes: int):
        super().__init__(arch, layers, input_shape)
        self.num_classes = int(num_classes)
        if self.output_shape != (self.num_classes,):
            raise ConfigurationError(f"{arch} produces {self.output_shape}, expected ({self.num_classes},)")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x)


class Autoencoder(_ChannelsLastNetwork):
    """
    Autoencoder ae = d(e(x)); output has the input's shape, values in [0, 1].
    """

    kind = "autoencoder"

    def __init__(self, arch: str, layers: Sequence[LayerSpec], input_shape: Tuple[int, int, int]):
        super().__init__(arch, layers, input_shape)
        height, width, channels = self.input_shape
        if self.output_shape != (channels, height, width):
            raise ConfigurationError(f"{arch} reconstructs {self.output_shape}, expected {(channels, height, width)}")
        if self.layers[-1].activation != "sigmoid":
            raise ConfigurationError(f"{arch} must end with a sigmoid layer to stay in [0, 1]")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x).permute(0, 2, 3, 1)


def build_classifier(arch: str, seed: Optional[int] = None) -> Classifier:
    """
    Build an untrained classifier.

    Args:
        arch: 'mnist' or 'cifar10'
        seed: seeds the fan-in scaled uniform weight initialization

    Raises:
        ConfigurationError: unknown arch id
    """
    if arch not in CLASSIFIER_ARCHITECTURES:
        raise ConfigurationError(f"unknown classifier arch '{arch}', expected one of {tuple(CLASSIFIER_ARCHITECTURES)}")

    input_shape, layers = CLASSIFIER_ARCHITECTURES[arch]
    with torch.random.fork_rng():
        if seed is not None:
            torch.manual_seed(seed)
        model = Classifier(arch, layers, input_shape, num_classes=10)
    model.seed = seed
    return model


def build_autoencoder(
    arch: str,
    input_shape: Optional[Tuple[int, int, int]] = None,
    seed: Optional[int] = None,
) -> Autoencoder:
    """
    Build an untrained autoencoder.

    Args:
        arch: 'mnist_I', 'mnist_II', 'cifar' or 'diverse'
        input_shape: override the arch's default (height, width, channels)
        seed: seeds weight initialization

    Raises:
        ConfigurationError: unknown arch id
    """
    if arch not in AUTOENCODER_INPUT_SHAPES:
        raise ConfigurationError(f"unknown autoencoder arch '{arch}', expected one of {tuple(AUTOENCODER_INPUT_SHAPES)}")

    shape = tuple(input_shape) if input_shape is not None else AUTOENCODER_INPUT_SHAPES[arch]
    layers = _autoencoder_layers(arch, channels=shape[2])
    with torch.random.fork_rng():
        if seed is not None:
            torch.manual_seed(seed)
        model = Autoencoder(arch, layers, shape)
    model.seed = seed
    return model
