"""
Engagement Detector - Model Store
Versioned JSON dumps of trained classifiers (standardizer, weights, config,
seed and feature ids), written atomically.
"""

import os
import json
import logging
from dataclasses import asdict

import numpy as np
from packaging.version import InvalidVersion, Version

from . import config
from .classify import (MlpConfig, MlpModel, Standardizer, SvmConfig, SvmModel,
                       TrainedClassifier)

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1.0"


class ModelFormatError(ValueError):
    """Model file is unreadable, of an unknown kind or from a newer format."""


def model_document(trained, class_names=(), seed=config.DEFAULT_SEED, config_hash=""):
    model = trained.model
    return {
        "format_version": FORMAT_VERSION,
        "generator": f"{config.APP_NAME} {config.APP_VERSION}",
        "kind": model.kind,
        "config": asdict(model.cfg),
        "seed": int(seed),
        "config_hash": config_hash,
        "feature_ids": list(trained.feature_ids),
        "classes": [int(c) for c in model.classes],
        "class_names": list(class_names),
        "standardizer": trained.standardizer.to_dict(),
        "weights": model.parameters(),
    }


def save_model(path, trained, class_names=(), seed=config.DEFAULT_SEED, config_hash=""):
    """Writes the model document to `path` through a temporary file."""
    document = model_document(trained, class_names, seed, config_hash)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    temp_path = path + ".tmp"
    try:
        with open(temp_path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(document, f, sort_keys=True, indent=1)
            f.write("\n")
        os.replace(temp_path, path)
    except OSError:
        logger.error(f"Failed to write model to {path}", exc_info=True)
        if os.path.exists(temp_path):
            try:
                os.remove(temp_path)
            except OSError:
                pass
        raise
    logger.info(f"{trained.kind.upper()} model saved to {path}")
    return path


def _check_version(raw):
    try:
        found = Version(str(raw))
    except InvalidVersion as e:
        raise ModelFormatError(f"invalid format_version: {raw!r}") from e
    supported = Version(FORMAT_VERSION)
    if found.major > supported.major:
        raise ModelFormatError(f"model format {found} is newer than supported {supported}")


def load_model(path):
    """Reads a model document.

    Returns:
        tuple: (TrainedClassifier, document dict)
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Model file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: not a model document ({e})") from e

    _check_version(document.get("format_version"))
    kind = document.get("kind")
    weights = document.get("weights", {})
    classes = np.asarray(document["classes"])
    seed = int(document.get("seed", config.DEFAULT_SEED))
    if kind == "svm":
        model = SvmModel(weights=np.asarray(weights["weights"], dtype=float),
                         bias=np.asarray(weights["bias"], dtype=float), classes=classes,
                         cfg=SvmConfig(**document.get("config", {})), seed=seed)
    elif kind == "mlp":
        arrays = {name: np.asarray(weights[name], dtype=float) for name in ("W1", "b1", "W2", "b2")}
        model = MlpModel(classes=classes, cfg=MlpConfig(**document.get("config", {})), seed=seed, **arrays)
    else:
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")

    trained = TrainedClassifier(standardizer=Standardizer.from_dict(document["standardizer"]),
                                model=model, feature_ids=tuple(document.get("feature_ids", ())))
    logger.debug(f"Loaded {kind} model from {path}")
    return trained, document
