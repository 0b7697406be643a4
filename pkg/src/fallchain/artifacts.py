"""
Versioned JSON containers for trained models.

Every artifact is ``{"format", "version", "kind", "meta", "payload"}`` written
with sorted keys, so equal inputs give byte-identical files.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from fallchain.config import PreprocConfig
from fallchain.locmodel import LocalizationModel
from fallchain.nnkernel import FrozenEncoderClassifier, ModelParams, SequenceAutoencoder, model_from_config
from fallchain.preproc import NormBounds, normalize_array
from fallchain.utils.exceptions import ArtifactError, MissingArtifact
from fallchain.visionstage import fall_classifier_from_dict

logger = logging.getLogger(__name__)

FORMAT = "fallchain-artifact"
VERSION = 1
KINDS = ("fall-model", "autoencoder", "loc-model", "vision-model")

PathLike = Union[str, Path]


def dump_artifact(kind: str, payload: Dict[str, Any], path: PathLike, meta: Optional[Dict[str, Any]] = None) -> Path:
    if kind not in KINDS:
        raise ArtifactError(f"unknown artifact kind {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format": FORMAT, "version": VERSION, "kind": kind, "meta": meta or {}, "payload": payload}
    path.write_text(json.dumps(document, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    logger.info(f"Wrote {kind} artifact to {path}")
    return path


def load_artifact(path: PathLike, kind: str) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """(payload, meta) of an artifact of the expected kind."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"{kind} artifact not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ArtifactError(f"{path}: unreadable artifact ({e})")
    if not isinstance(document, dict) or document.get("format") != FORMAT:
        raise ArtifactError(f"{path}: not a fallchain artifact")
    if document.get("version") != VERSION:
        raise ArtifactError(f"{path}: unsupported artifact version {document.get('version')!r}")
    if document.get("kind") != kind:
        raise ArtifactError(f"{path}: expected a {kind} artifact, found {document.get('kind')!r}")
    return document["payload"], document.get("meta", {})


@dataclass
class FallModel:
    """Frozen-encoder classifier with the bounds and cleaning settings it was trained under."""

    classifier: FrozenEncoderClassifier
    bounds: NormBounds
    preproc: PreprocConfig

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        return self.classifier.predict(normalize_array(np.asarray(windows, dtype=np.float64), self.bounds))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.classifier.config(),
            "params": self.classifier.params.to_dict(),
            "bounds": self.bounds.to_dict(),
            "preproc": self.preproc.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FallModel":
        try:
            classifier = model_from_config(data["model"], ModelParams.from_dict(data["params"]))
            return cls(classifier, NormBounds.from_dict(data["bounds"]), PreprocConfig.from_dict(data["preproc"]))
        except KeyError as e:
            raise ArtifactError(f"fall model missing key {e}")


def save_fall_model(model: FallModel, path: PathLike, meta: Optional[Dict[str, Any]] = None) -> Path:
    return dump_artifact("fall-model", model.to_dict(), path, meta)


def load_fall_model(path: PathLike) -> FallModel:
    payload, _ = load_artifact(path, "fall-model")
    return FallModel.from_dict(payload)


def save_autoencoder(model: SequenceAutoencoder, bounds: NormBounds, path: PathLike,
                     meta: Optional[Dict[str, Any]] = None) -> Path:
    payload = {"model": model.config(), "params": model.params.to_dict(), "bounds": bounds.to_dict()}
    return dump_artifact("autoencoder", payload, path, meta)


def load_autoencoder(path: PathLike) -> Tuple[SequenceAutoencoder, NormBounds]:
    payload, _ = load_artifact(path, "autoencoder")
    try:
        model = model_from_config(payload["model"], ModelParams.from_dict(payload["params"]))
        return model, NormBounds.from_dict(payload["bounds"])
    except KeyError as e:
        raise ArtifactError(f"autoencoder artifact missing key {e}")


def save_loc_model(model: LocalizationModel, path: PathLike, meta: Optional[Dict[str, Any]] = None) -> Path:
    return dump_artifact("loc-model", model.to_dict(), path, meta)


def load_loc_model(path: PathLike) -> LocalizationModel:
    payload, _ = load_artifact(path, "loc-model")
    return LocalizationModel.from_dict(payload)


def save_vision_model(model, path: PathLike, meta: Optional[Dict[str, Any]] = None) -> Path:
    return dump_artifact("vision-model", model.to_dict(), path, meta)


def load_vision_model(path: PathLike):
    payload, _ = load_artifact(path, "vision-model")
    return fall_classifier_from_dict(payload)
