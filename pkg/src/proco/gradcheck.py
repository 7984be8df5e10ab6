"""Randomized finite-difference checks of the three training losses."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .loss import ContrastSets, cross_entropy, info_nce, proto_loss


def _units(rng, n, k):
    v = rng.standard_normal((n, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def proto_loss_case(rng, k=8, C=4, queue_size=16, tau=1.0):
    """A random anchor against a random labelled queue; returns (f, params)."""
    labels = rng.integers(C, size=queue_size)
    y = int(rng.integers(C))
    feats = _units(rng, queue_size, k)
    calib = rng.uniform(0.01, 0.99, C)

    def f(tape, p):
        sets = ContrastSets(feats[labels != y], feats[labels == y], p["P"], y, calib)
        return proto_loss(p["g"], p["f"], sets, tau)

    params = {"g": _units(rng, 1, k)[0], "f": np.abs(rng.standard_normal(k)), "P": rng.standard_normal((C, k))}
    return f, params


def cross_entropy_case(rng, k=8, C=4, batch=3):
    y = rng.integers(C, size=batch)
    params = {"f": rng.standard_normal((batch, k)), "P": rng.standard_normal((C, k))}
    return (lambda tape, p: cross_entropy(p["f"], p["P"], y)), params


def info_nce_case(rng, k=8, queue_size=16, tau=1.0):
    pos = _units(rng, 1, k)[0]
    negs = _units(rng, queue_size, k)
    params = {"g": _units(rng, 1, k)[0]}
    return (lambda tape, p: info_nce(p["g"], pos, negs, tau)), params


CASES = {
    "proto_loss": proto_loss_case,
    "cross_entropy": cross_entropy_case,
    "info_nce": info_nce_case,
}


def run(trials: int = 100, tol: float = 1e-4, seed: int = 0, eps: float = 1e-5) -> dict:
    """Per-loss summary ``{name: {"trials", "max_rel_err", "failures"}}``."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, make in CASES.items():
        worst, failures = 0.0, 0
        for _ in range(trials):
            f, params = make(rng)
            rep = ad.grad_check(f, params, eps=eps, tol=tol)
            worst = max(worst, rep.max_rel_err)
            failures += not rep.passed
        out[name] = {"trials": trials, "max_rel_err": worst, "failures": failures}
    return out
