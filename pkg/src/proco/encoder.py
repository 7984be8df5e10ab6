"""MLP backbone with a classification head F and a contrastive head G."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

PARAM_NAMES = (
    "backbone.w1",
    "backbone.b1",
    "backbone.w2",
    "backbone.b2",
    "head_f.w",
    "head_f.b",
    "head_g.w1",
    "head_g.b1",
    "head_g.w2",
    "head_g.b2",
)


def init(d: int, hidden: int, k: int, seed: int = 0, g_hidden: int = 2048) -> dict[str, np.ndarray]:
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    if min(d, hidden, k, g_hidden) <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)

    def dense(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    return {
        "backbone.w1": dense(d, hidden),
        "backbone.b1": np.zeros(hidden),
        "backbone.w2": dense(hidden, hidden),
        "backbone.b2": np.zeros(hidden),
        "head_f.w": dense(hidden, k),
        "head_f.b": np.zeros(k),
        "head_g.w1": dense(hidden, g_hidden),
        "head_g.b1": np.zeros(g_hidden),
        "head_g.w2": dense(g_hidden, k),
        "head_g.b2": np.zeros(k),
    }


def _affine(x, w, b):
    return ad.add(ad.matmul(x, w), b)


def forward(params, x, normalize_f: bool = False, normalize_g: bool = True, need_g: bool = True):
    """Return ``(f, g)`` for a batch ``x`` of shape (n, d) or a single (d,) vector.

    ``params`` values may be arrays (constants) or tape leaves.  ``f`` is the
    rectified head-F output; ``g`` is L2-normalized along the feature axis, or
    None when ``need_g`` is false (classification only needs ``f``).
    """
    p = {name: ad.const(params[name]) for name in PARAM_NAMES}
    x = ad.const(x)
    single = x.value.ndim == 1
    if single:
        x = ad.const(x.value[None, :])
    d = p["backbone.w1"].value.shape[0]
    if x.value.shape[1] != d:
        raise ShapeError(f"encoder expects inputs of dimension {d}, got {x.value.shape[1]}")
    h = ad.relu(_affine(x, p["backbone.w1"], p["backbone.b1"]))
    h = ad.relu(_affine(h, p["backbone.w2"], p["backbone.b2"]))
    f = ad.relu(_affine(h, p["head_f.w"], p["head_f.b"]))
    if normalize_f:
        f = ad.l2_normalize(f, axis=-1)
    if not need_g:
        return (ad.reshape(f, (-1,)) if single else f), None
    z = ad.relu(_affine(h, p["head_g.w1"], p["head_g.b1"]))
    g = _affine(z, p["head_g.w2"], p["head_g.b2"])
    if normalize_g:
        g = ad.l2_normalize(g, axis=-1)
    if single:
        f = ad.reshape(f, (-1,))
        g = ad.reshape(g, (-1,))
    return f, g


def check_same_shapes(a: dict, b: dict) -> None:
    if a.keys() != b.keys():
        raise ShapeError("parameter sets have different names")
    for name in a:
        if np.shape(a[name]) != np.shape(b[name]):
            raise ShapeError(f"{name}: shape {np.shape(a[name])} vs {np.shape(b[name])}")


@dataclass
class MomentumEncoder:
    """Key encoder that trails the online parameters; never receives gradients."""

    key_params: dict[str, np.ndarray] = field(default_factory=dict)
    m: float = 0.999

    @classmethod
    def from_online(cls, online: dict, m: float = 0.999) -> "MomentumEncoder":
        if not 0 <= m <= 1:
            raise ValueError("momentum coefficient must lie in [0, 1]")
        return cls({k: np.array(v, dtype=np.float64) for k, v in online.items()}, m)

    def update(self, online: dict) -> None:
        momentum_update(online, self)


def momentum_update(online: dict, key: MomentumEncoder) -> None:
    """theta_k <- m * theta_k + (1 - m) * theta_q, in place on the key copy."""
    check_same_shapes(online, key.key_params)
    m = key.m
    for name, q in online.items():
        k = key.key_params[name]
        k *= m
        k += (1.0 - m) * q
