"""Proto-loss and the CE / InfoNCE baselines.

For one anchor with contrastive feature g and classification feature f the
proto-loss is

    log(1 + (sum_neg e^{l}) * (sum_pos e^{-l}))

where the negative logits are g.s for s in the negative pool and the
(calibrated) prototype logits of the other classes, and the positive logits
are g.s for s in the positive pool and the calibrated logit of the anchor's
own class.  It is evaluated as ``softplus(LSE(neg) + LSE(-pos))`` so that
nothing overflows.  Every logit is divided by a temperature ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mining import (
    BatchMining,
    mine_batch,
    misclassified,
    select_hard_negatives,
    synthesize_negatives,
    synthesize_positives,
)
from .prototypes import PrototypeBank, calibration_bias


@dataclass
class ContrastSets:
    """Everything one anchor is contrasted against.

    ``neg_feats`` / ``pos_feats`` are the G-space pools (queue entries plus
    synthesized proto-instances).  The prototype terms come from ``P`` with
    class ``y`` positive and every other class negative.
    """

    neg_feats: np.ndarray
    pos_feats: np.ndarray
    P: object  # (C, k) array or tape Var
    y: int
    calib: np.ndarray | None = None  # None disables recalibration
    calib_mode: str = "bias"


def _rows(a, k):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(0, k) if a.size == 0 else np.atleast_2d(a)


def proto_loss(g, f, sets: ContrastSets, tau: float = 1.0) -> ad.Var:
    if tau <= 0:
        raise ValueError("temperature must be positive")
    g = ad.const(g)
    f = ad.const(f)
    k = g.value.shape[-1]
    g2 = ad.reshape(g, (1, k))
    f2 = ad.reshape(f, (1, -1))
    P = ad.const(sets.P)
    C = P.value.shape[0]
    logits = ad.matmul(f2, ad.transpose(P))
    if sets.calib is not None:
        logits = ad.add(logits, calibration_bias(f2, sets.calib, sets.calib_mode))
    neg_q = ad.matmul(g2, ad.const(_rows(sets.neg_feats, k).T))
    pos_q = ad.matmul(g2, ad.const(_rows(sets.pos_feats, k).T))
    own = np.arange(C) == sets.y
    neg = ad.scale(ad.concat([neg_q, logits], axis=1), 1.0 / tau)
    pos = ad.scale(ad.concat([pos_q, logits], axis=1), -1.0 / tau)
    neg_mask = np.concatenate([np.ones(neg_q.value.shape[1], bool), ~own])[None, :]
    pos_mask = np.concatenate([np.ones(pos_q.value.shape[1], bool), own])[None, :]
    z = ad.add(ad.logsumexp(neg, axis=1, mask=neg_mask), ad.logsumexp(pos, axis=1, mask=pos_mask))
    return ad.sum_(ad.softplus(z))


def proto_loss_naive(g, f, sets: ContrastSets, tau: float = 1.0) -> float:
    """Direct, unstabilized evaluation; overflows for large logits."""
    g = np.asarray(g, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    P = np.asarray(sets.P.value if isinstance(sets.P, ad.Var) else sets.P)
    logits = P @ f
    if sets.calib is not None:
        bias = calibration_bias(f[None, :], sets.calib, sets.calib_mode)
        logits = logits + np.asarray(getattr(bias, "value", bias)).reshape(-1)
    neg_sum = 0.0
    for s in _rows(sets.neg_feats, g.size):
        neg_sum += np.exp(g @ s / tau)
    pos_sum = 0.0
    for s in _rows(sets.pos_feats, g.size):
        pos_sum += np.exp(-(g @ s) / tau)
    for c, l in enumerate(logits):
        if c == sets.y:
            pos_sum += np.exp(-l / tau)
        else:
            neg_sum += np.exp(l / tau)
    return float(np.log1p(neg_sum * pos_sum))


def cross_entropy(f, P, y) -> ad.Var:
    """Mean of -log softmax(f P^T)_y over the rows of ``f`` (or the single vector)."""
    f = ad.const(f)
    if f.value.ndim == 1:
        f = ad.reshape(f, (1, -1))
    y = np.atleast_1d(np.asarray(y))
    P = P.P if isinstance(P, PrototypeBank) else P
    logits = ad.matmul(f, ad.transpose(ad.const(P)))
    onehot = np.arange(logits.value.shape[1])[None, :] == y[:, None]
    lse = ad.logsumexp(logits, axis=1)
    own = ad.logsumexp(logits, axis=1, mask=onehot)
    return ad.mean(ad.sub(lse, own))


def info_nce(g, positive, negatives, tau: float = 1.0) -> ad.Var:
    """-log( e^{g.pos/tau} / (e^{g.pos/tau} + sum_neg e^{g.neg/tau}) )."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    g = ad.const(g)
    k = g.value.shape[-1]
    g2 = ad.reshape(g, (1, k))
    keys = np.vstack([np.reshape(positive, (1, k)), _rows(negatives, k)])
    l = ad.scale(ad.matmul(g2, ad.const(keys.T)), 1.0 / tau)
    first = np.zeros(keys.shape[0], bool)
    first[0] = True
    return ad.sum_(ad.sub(ad.logsumexp(l, axis=1), ad.logsumexp(l, axis=1, mask=first[None, :])))


def info_nce_batch(G, keys, queue_g, tau: float = 1.0) -> ad.Var:
    """Mean InfoNCE: row i of ``keys`` is anchor i's positive, the queue holds the negatives."""
    G = ad.const(G)
    pos = ad.sum_(ad.mul(G, ad.const(keys)), axis=1)
    pos = ad.reshape(pos, (-1, 1))
    neg = ad.matmul(G, ad.const(np.asarray(queue_g).T))
    l = ad.scale(ad.concat([pos, neg], axis=1), 1.0 / tau)
    mask = np.zeros(l.value.shape[1], bool)
    mask[0] = True
    return ad.mean(ad.sub(ad.logsumexp(l, axis=1), ad.logsumexp(l, axis=1, mask=mask[None, :])))


@dataclass
class LossConfig:
    tau: float = 1.0
    gamma: int = 20
    E: float = 0.4
    proto_instances: bool = True
    recalibration: bool = True
    calib_mode: str = "bias"


def batch_proto_loss(
    G, F, y, queue_g, queue_labels, mining: BatchMining, P, calib, cfg: LossConfig, P_mix=None
) -> ad.Var:
    """Mean proto-loss over a batch, all anchors at once.

    ``G`` and ``F`` are (B, k) features, ``P`` the (C, k) prototypes; any of
    them may be tape Vars.  Queue arrays and ``mining`` are constants, as is
    ``P_mix``, the prototype snapshot mixed into proto-instances (defaults to
    the current value of ``P``).
    """
    G, F, P = ad.const(G), ad.const(F), ad.const(P)
    y = np.asarray(y)
    B = G.value.shape[0]
    C = P.value.shape[0]
    queue_g = np.asarray(queue_g, dtype=np.float64).reshape(-1, G.value.shape[1])
    same = np.asarray(queue_labels)[None, :] == y[:, None]
    own = np.arange(C)[None, :] == y[:, None]

    S = ad.matmul(G, ad.const(queue_g.T))
    logits = ad.matmul(F, ad.transpose(P))
    if cfg.recalibration:
        logits = ad.add(logits, calibration_bias(F, calib, cfg.calib_mode))
    # proto-instances are constants: the prototype enters detached
    P_mix = P.value if P_mix is None else np.asarray(P_mix, dtype=np.float64)
    GP = ad.matmul(G, ad.const(P_mix.T))
    neg_parts, pos_parts = [S, logits], [S, logits]
    neg_masks, pos_masks = [~same, ~own], [same, own]
    if mining.neg_index.shape[1]:
        syn = ad.add(
            ad.mul(ad.gather(S, mining.neg_index), mining.neg_a),
            ad.mul(ad.gather(GP, np.repeat(y[:, None], mining.neg_index.shape[1], 1)), mining.neg_b),
        )
        neg_parts.append(syn)
        neg_masks.append(mining.neg_valid)
    if mining.pos_valid.any():
        cls = np.broadcast_to(mining.pos_class[None, :], (B, len(mining.pos_class)))
        syn = ad.add(ad.mul(S, mining.pos_a), ad.mul(ad.gather(GP, cls), mining.pos_b))
        pos_parts.append(syn)
        pos_masks.append(mining.pos_valid)
    neg = ad.scale(ad.concat(neg_parts, axis=1), 1.0 / cfg.tau)
    pos = ad.scale(ad.concat(pos_parts, axis=1), -1.0 / cfg.tau)
    z = ad.add(
        ad.logsumexp(neg, axis=1, mask=np.concatenate(neg_masks, axis=1)),
        ad.logsumexp(pos, axis=1, mask=np.concatenate(pos_masks, axis=1)),
    )
    return ad.mean(ad.softplus(z))


@dataclass
class Anchor:
    g: np.ndarray
    f: np.ndarray
    y: int
    neg_eps: np.ndarray | None = None  # one per selected hard negative
    pos_eps: np.ndarray | None = None  # one per same-class queue entry


def anchor_sets(anchor: Anchor, queue, bank: PrototypeBank, cfg: LossConfig, rng=None) -> ContrastSets:
    """Mine one anchor against the queue and assemble its contrast sets."""
    Qp, Qn = queue.partition(anchor.y)
    neg_feats = [e.g_feat for e in Qn]
    pos_feats = [e.g_feat for e in Qp]
    if cfg.proto_instances:
        if Qn:
            sel = select_hard_negatives(anchor.g, np.stack(neg_feats), cfg.gamma)
            eps = anchor.neg_eps[: len(sel)] if anchor.neg_eps is not None else None
            syn = synthesize_negatives(np.stack(neg_feats)[sel], bank.P[anchor.y], cfg.E, rng, eps)
            neg_feats += [s.feature for s in syn]
        pos_feats += [s.feature for s in synthesize_positives(Qp, bank, anchor.y, cfg.E, rng, anchor.pos_eps)]
    k = len(anchor.g)
    return ContrastSets(
        neg_feats=np.array(neg_feats).reshape(-1, k),
        pos_feats=np.array(pos_feats).reshape(-1, k),
        P=bank.P,
        y=anchor.y,
        calib=bank.calib if cfg.recalibration else None,
        calib_mode=cfg.calib_mode,
    )


def batch_loss(anchors, queue, bank: PrototypeBank, cfg: LossConfig, rng=None) -> float:
    """Mean of per-anchor proto-losses, mining each anchor separately.

    This is the slow reference route; training uses :func:`batch_proto_loss`.
    """
    anchors = list(anchors)
    if not anchors:
        raise ValueError("empty batch")
    total = 0.0
    for a in anchors:
        total += float(proto_loss(a.g, a.f, anchor_sets(a, queue, bank, cfg, rng), cfg.tau).value)
    return total / len(anchors)


def mine_for_batch(G, y, queue, P, cfg: LossConfig, rng) -> BatchMining:
    return mine_batch(
        G,
        y,
        queue.g,
        queue.f,
        queue.labels,
        P,
        gamma=cfg.gamma,
        E=cfg.E,
        rng=rng,
        negatives=cfg.proto_instances,
        positives=cfg.proto_instances,
    )


__all__ = [
    "ContrastSets",
    "proto_loss",
    "proto_loss_naive",
    "cross_entropy",
    "info_nce",
    "info_nce_batch",
    "LossConfig",
    "batch_proto_loss",
    "Anchor",
    "anchor_sets",
    "batch_loss",
    "mine_for_batch",
    "misclassified",
]
