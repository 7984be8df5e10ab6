"""Versioned JSON checkpoints: named matrices with shapes plus calibration and config."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .prototypes import PrototypeBank

FORMAT = "proco-checkpoint"
VERSION = 1


def _record(arr) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _array(rec) -> np.ndarray:
    return np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])


def to_dict(params: dict, bank: PrototypeBank, config: TrainConfig | None = None, key_params=None) -> dict:
    out = {
        "format": FORMAT,
        "version": VERSION,
        "params": {k: _record(v) for k, v in params.items()},
        "prototypes": _record(bank.P),
        "calibration": _record(bank.calib),
        "beta": bank.beta,
    }
    if key_params is not None:
        out["key_params"] = {k: _record(v) for k, v in key_params.items()}
    if config is not None:
        out["config"] = config.to_dict()
        out["config_hash"] = config.digest()
    return out


def save(path, params, bank, config=None, key_params=None) -> None:
    Path(path).write_text(json.dumps(to_dict(params, bank, config, key_params)), encoding="utf-8")


def load(path):
    """Return ``(params, bank, config_or_None)``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {k: _array(v) for k, v in doc["params"].items()}
    bank = PrototypeBank(_array(doc["prototypes"]), _array(doc["calibration"]), doc["beta"])
    config = TrainConfig(**doc["config"]) if "config" in doc else None
    return params, bank, config
