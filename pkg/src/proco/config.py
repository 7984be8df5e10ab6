"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

METHODS = ("proco", "ce", "ce_resample", "info_nce", "info_nce_resample")

_ALIASES = {
    "ce-resample": "ce_resample",
    "infonce": "info_nce",
    "info-nce": "info_nce",
    "infonce-resample": "info_nce_resample",
    "infonce_resample": "info_nce_resample",
    "info-nce-resample": "info_nce_resample",
}


def canonical_method(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.05
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    beta: float = 0.95
    omega_init: float = 0.01
    gamma: int = 20
    E: float = 0.4
    m: float = 0.999
    M: int = 4096
    tau: float = 1.0
    epochs: int = 200
    seed: int = 0
    method: str = "proco"
    proto_instances: bool = True
    recalibration: bool = True
    calib_mode: str = "bias"
    hidden: int = 256
    g_hidden: int = 2048
    k: int = 128
    normalize_f: bool = False
    normalize_g: bool = True
    train_fraction: float = 0.7
    split_mode: str = "stratified"
    split_seed: int = 0

    def validate(self) -> "TrainConfig":
        canonical_method(self.method)
        for name in ("batch_size", "gamma", "M", "hidden", "g_hidden", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0 or self.tau <= 0:
            raise ConfigError("lr and tau must be positive")
        if self.weight_decay < 0 or not 0 <= self.sgd_momentum < 1:
            raise ConfigError("need weight_decay >= 0 and sgd_momentum in [0, 1)")
        if not 0 < self.E <= 0.5:
            raise ConfigError("E must lie in (0, 0.5]")
        if not 0 < self.beta < 1 or not 0 < self.m < 1:
            raise ConfigError("beta and m must lie in (0, 1)")
        if not 0 < self.omega_init < 1:
            raise ConfigError("omega_init must lie in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.calib_mode not in ("bias", "broadcast"):
            raise ConfigError("calib_mode must be 'bias' or 'broadcast'")
        if self.split_mode not in ("stratified", "random"):
            raise ConfigError("split_mode must be 'stratified' or 'random'")
        return self

    def with_overrides(self, **kw) -> "TrainConfig":
        if "method" in kw:
            kw["method"] = canonical_method(kw["method"])
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_overrides(pairs: dict) -> dict:
    out = {}
    for key, raw in pairs.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, _TYPES[key], str(raw))
    return out


def read_config_file(path) -> dict:
    """``key = value`` per line; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return parse_overrides(pairs)


def write_config_file(config: TrainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
