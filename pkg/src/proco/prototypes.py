"""Learnable class prototypes and their calibration factors."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from . import autodiff as ad
from .errors import DomainError

OMEGA_INIT = 0.01
BETA = 0.95

# keeps the calibration state strictly inside (0, 1) when sigmoid saturates
_LO = np.nextafter(0.0, 1.0)
_HI = np.nextafter(1.0, 0.0)


@dataclass
class PrototypeBank:
    P: np.ndarray  # (C, k)
    calib: np.ndarray  # (C,) running calibration factors
    beta: float = BETA

    @property
    def num_classes(self) -> int:
        return self.P.shape[0]

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.P.copy(), self.calib.copy(), self.beta)


def init_prototypes(
    num_classes: int, k: int, seed: int = 0, omega_init: float = OMEGA_INIT, beta: float = BETA
) -> PrototypeBank:
    if num_classes < 1 or k < 1:
        raise ValueError("num_classes and k must be positive")
    if not 0 < omega_init < 1:
        raise DomainError("omega_init must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((num_classes, k))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return PrototypeBank(P, np.full(num_classes, float(omega_init)), beta)


def batch_calibration_factor(f_feats, p_c) -> float | None:
    """Mean of sigmoid(f_j . p_c) over the samples of one class.

    Returns ``None`` when there are no samples, meaning "skip this class".
    """
    f_feats = np.atleast_2d(np.asarray(f_feats, dtype=np.float64))
    if f_feats.shape[0] == 0 or f_feats.size == 0:
        return None
    s = ad.stable_sigmoid(f_feats @ np.asarray(p_c, dtype=np.float64))
    return float(np.clip(s.mean(), _LO, _HI))


def _complement(beta: float) -> float:
    # 1 - 0.95 in binary is 0.05000000000000004; take the decimal complement instead
    return float(Decimal(1) - Decimal(repr(float(beta))))


def update_calibration(bank: PrototypeBank, c: int, omega_batch: float) -> None:
    """omega_bar_c <- beta * omega_bar_c + (1 - beta) * omega_batch."""
    b = bank.beta
    bank.calib[c] = np.clip(b * bank.calib[c] + _complement(b) * omega_batch, _LO, _HI)


def update_from_batch(bank: PrototypeBank, f_feats, labels) -> list[int]:
    """EMA-update every class present in the batch; returns the updated classes."""
    f_feats = np.asarray(f_feats, dtype=np.float64)
    labels = np.asarray(labels)
    updated = []
    for c in np.unique(labels):
        omega = batch_calibration_factor(f_feats[labels == c], bank.P[c])
        if omega is not None:
            update_calibration(bank, int(c), omega)
            updated.append(int(c))
    return updated


def recalibrated_logit(f, p_c, omega_c: float) -> float:
    """f . p_c + ln(omega_c): the prototype's exponent weighted by omega_c."""
    if omega_c <= 0:
        raise DomainError("calibration factor must be positive")
    return float(np.dot(f, p_c) + np.log(omega_c))


def calibration_bias(f, calib, mode: str = "bias"):
    """Additive correction to the (n, C) prototype logits.

    ``bias`` adds ln(omega_c) to class c.  ``broadcast`` reads the prototype
    correction as ``p_c + ln(omega_c) * 1`` so the logit moves by
    ``ln(omega_c) * sum(f)``.  ``f`` may be an array or a tape Var.
    """
    calib = np.asarray(calib, dtype=np.float64)
    if np.any(calib <= 0):
        raise DomainError("calibration factor must be positive")
    logw = np.log(calib)[None, :]
    if mode == "bias":
        return logw
    if mode == "broadcast":
        fsum = ad.sum_(f, axis=1) if isinstance(f, ad.Var) else ad.const(np.sum(f, axis=1))
        return ad.mul(ad.make_op(fsum.value[:, None], [(fsum, lambda g: g[:, 0])]), logw)
    raise ValueError(f"unknown calibration mode {mode!r}")


def predict(f, bank_or_P) -> np.ndarray | int:
    """argmax_c f . p_c with ties to the smallest index; no calibration bias."""
    P = bank_or_P.P if isinstance(bank_or_P, PrototypeBank) else np.asarray(bank_or_P)
    f = np.asarray(f, dtype=np.float64)
    logits = f @ P.T
    if f.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)
