"""
Model archives.

An archive is a zip container with:
- metadata.json: format version, model kind, arch id, input shape, seed,
  training config, training log and the library-agnostic layer list
- weights/<parameter path>.bin: raw little-endian float32 blob per tensor
"""

import hashlib
import json
import zipfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
from loguru import logger

from execution.errors import SerializationError
from execution.models.networks import Autoencoder, Classifier, LayerSpec


ARCHIVE_FORMAT_VERSION = 1
METADATA_NAME = "metadata.json"
WEIGHTS_DIR = "weights"

Model = Union[Classifier, Autoencoder]


def fingerprint(path: Union[str, Path]) -> str:
    """sha256 of an archive file; recorded by every artifact derived from it."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def model_metadata(model: Model) -> Dict[str, Any]:
    metadata: Dict[str, Any] = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "kind": model.kind,
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "training_config": model.training_config,
        "training_log": model.training_log,
        "layers": [spec.to_dict() for spec in model.layers],
        "parameters": [],
    }
    if isinstance(model, Classifier):
        metadata["num_classes"] = model.num_classes
    return metadata


def save_model(model: Model, path: Union[str, Path]) -> Path:
    """
    Write a model archive.

    Entries are written in a fixed order with fixed timestamps so that the
    same weights always produce the same bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = model_metadata(model)

    blobs = {}
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy().astype("<f4")
        metadata["parameters"].append({"name": name, "shape": list(array.shape)})
        blobs[f"{WEIGHTS_DIR}/{name}.bin"] = array.tobytes()

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        fixed = (1980, 1, 1, 0, 0, 0)
        archive.writestr(zipfile.ZipInfo(METADATA_NAME, fixed), json.dumps(metadata, indent=2, sort_keys=True))
        for entry, data in blobs.items():
            archive.writestr(zipfile.ZipInfo(entry, fixed), data)

    logger.info(f"Saved {model.kind} '{model.arch}' to {path}")
    return path


def read_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    """Metadata document of an archive without loading weights."""
    path = Path(path)
    if not path.exists():
        raise SerializationError(f"{path}: archive not found")
    try:
        with zipfile.ZipFile(path) as archive:
            return json.loads(archive.read(METADATA_NAME))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise SerializationError(f"{path}: unreadable archive ({e})") from e


def load_model(path: Union[str, Path], expected_arch: Optional[str] = None, expected_kind: Optional[str] = None) -> Model:
    """
    Rebuild a model from an archive.

    Args:
        path: archive path
        expected_arch: if given, the archive's arch id must match exactly
        expected_kind: if given, 'classifier' or 'autoencoder'

    Raises:
        SerializationError: unreadable archive, version mismatch, arch or
            kind mismatch, or weights that do not fit the layer list
    """
    path = Path(path)
    metadata = read_metadata(path)

    version = metadata.get("format_version")
    if version != ARCHIVE_FORMAT_VERSION:
        raise SerializationError(f"{path}: format version {version}, expected {ARCHIVE_FORMAT_VERSION}")
    if expected_arch is not None and metadata["arch"] != expected_arch:
        raise SerializationError(f"{path}: archive holds arch '{metadata['arch']}', expected '{expected_arch}'")
    if expected_kind is not None and metadata["kind"] != expected_kind:
        raise SerializationError(f"{path}: archive holds a {metadata['kind']}, expected a {expected_kind}")

    layers = [LayerSpec.from_dict(spec) for spec in metadata["layers"]]
    input_shape = tuple(metadata["input_shape"])
    if metadata["kind"] == "classifier":
        model: Model = Classifier(metadata["arch"], layers, input_shape, metadata["num_classes"])
    elif metadata["kind"] == "autoencoder":
        model = Autoencoder(metadata["arch"], layers, input_shape)
    else:
        raise SerializationError(f"{path}: unknown model kind '{metadata['kind']}'")

    state = {}
    with zipfile.ZipFile(path) as archive:
        for param in metadata["parameters"]:
            try:
                raw = archive.read(f"{WEIGHTS_DIR}/{param['name']}.bin")
            except KeyError as e:
                raise SerializationError(f"{path}: missing weight blob '{param['name']}'") from e
            array = np.frombuffer(raw, dtype="<f4").reshape(param["shape"])
            state[param["name"]] = torch.from_numpy(array.astype(np.float32))

    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise SerializationError(f"{path}: weights do not match the layer list ({e})") from e

    model.seed = metadata.get("seed")
    model.training_config = metadata.get("training_config")
    model.training_log = metadata.get("training_log") or []
    model.eval()
    return model
