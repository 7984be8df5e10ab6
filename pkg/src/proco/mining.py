"""Hard-negative selection and adversarial proto-instance synthesis.

Two routes compute the same thing.  The per-anchor functions
(:func:`select_hard_negatives`, :func:`synthesize_negatives`,
:func:`synthesize_positives`) materialize every proto-instance and are the
readable reference.  :func:`mine_batch` handles a whole batch against the
queue at once and only keeps the interpolation coefficients, because a
proto-instance enters the loss solely through its inner product with the
anchor's contrastive feature:

    g . normalize((1-e) s + e p) = ((1-e) g.s + e g.p) / ||(1-e) s + e p||
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .prototypes import PrototypeBank

log = logging.getLogger(__name__)

GAMMA = 20
E_MAX = 0.4


@dataclass(frozen=True)
class ProtoInstance:
    feature: np.ndarray
    polarity: str  # "positive" | "negative"
    epsilon: float
    source: int  # index of the queue feature it was built from


def check_upper_bound(E: float) -> None:
    if not 0 < E <= 0.5:
        raise ConfigError(f"interpolation bound E must lie in (0, 0.5], got {E}")


def draw_eps(rng: np.random.Generator, E: float, size) -> np.ndarray:
    """Uniform draws on the open interval (0, E)."""
    u = rng.random(size)
    u[u == 0.0] = 0.5
    return E * u


def cosine_distance(g, s) -> float:
    g = np.asarray(g, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    ng, ns = np.linalg.norm(g), np.linalg.norm(s)
    if ng == 0 or ns == 0:
        raise DegenerateInputError("cosine distance of a zero vector")
    return float(1.0 - np.dot(g, s) / (ng * ns))


def select_hard_negatives(g, negatives, gamma: int = GAMMA) -> np.ndarray:
    """Indices of the ``gamma`` rows of ``negatives`` closest to ``g``.

    Sorted by ascending cosine distance; equal distances keep queue order.
    """
    if gamma < 1:
        raise ConfigError("gamma must be >= 1")
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.size == 0:
        return np.empty(0, dtype=np.intp)
    dist = np.array([cosine_distance(g, s) for s in negatives])
    return np.argsort(dist, kind="stable")[:gamma]


def _interpolate(s, p, eps):
    v = (1.0 - eps) * s + eps * p
    n = np.linalg.norm(v)
    if n == 0:
        return None
    return v / n


def synthesize_negatives(hard_negatives, p_pos, E: float = E_MAX, rng=None, eps=None) -> list[ProtoInstance]:
    """normalize((1-e_i) s_i + e_i p+) for each selected negative, order kept.

    ``eps`` overrides the random draws (one per row).
    """
    check_upper_bound(E)
    hard_negatives = np.atleast_2d(np.asarray(hard_negatives, dtype=np.float64))
    n = 0 if hard_negatives.size == 0 else hard_negatives.shape[0]
    if eps is None:
        eps = draw_eps(rng if rng is not None else np.random.default_rng(), E, n)
    p_pos = np.asarray(p_pos, dtype=np.float64)
    out = []
    for i in range(n):
        feat = _interpolate(hard_negatives[i], p_pos, eps[i])
        if feat is None:
            log.warning("negative proto-instance %d has zero norm; skipped", i)
            continue
        out.append(ProtoInstance(feat, "negative", float(eps[i]), i))
    return out


def misclassified(f_feats, P, y: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows whose prototype argmax differs from ``y``: (row indices, predicted classes)."""
    f_feats = np.atleast_2d(np.asarray(f_feats, dtype=np.float64))
    if f_feats.size == 0:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    pred = np.argmax(f_feats @ np.asarray(P).T, axis=1)
    rows = np.flatnonzero(pred != y)
    return rows, pred[rows]


def synthesize_positives(positives, bank: PrototypeBank, y: int, E: float = E_MAX, rng=None, eps=None):
    """Proto-instances from same-class queue entries the prototypes get wrong.

    ``positives`` is a sequence of queue entries.  Each misclassified entry's
    contrastive feature is mixed with the prototype it was wrongly assigned
    to.  ``eps``, if given, holds one coefficient per entry in ``positives``.
    """
    check_upper_bound(E)
    positives = list(positives)
    if not positives:
        return []
    F = np.stack([e.f_feat for e in positives])
    G = np.stack([e.g_feat for e in positives])
    if eps is None:
        eps = draw_eps(rng if rng is not None else np.random.default_rng(), E, len(positives))
    rows, wrong = misclassified(F, bank.P, y)
    out = []
    for j, c in zip(rows, wrong):
        feat = _interpolate(G[j], bank.P[c], eps[j])
        if feat is None:
            log.warning("positive proto-instance %d has zero norm; skipped", j)
            continue
        out.append(ProtoInstance(feat, "positive", float(eps[j]), int(j)))
    return out


@dataclass
class BatchMining:
    """Per-anchor mining results for a batch against one queue snapshot.

    A synthesized logit is ``a * (g . s) + b * (g . p)`` where the queue
    feature ``s`` and prototype ``p`` are given by the index arrays.
    """

    neg_index: np.ndarray  # (B, gamma) queue rows of the hard negatives
    neg_valid: np.ndarray  # (B, gamma) bool
    neg_a: np.ndarray
    neg_b: np.ndarray
    neg_eps: np.ndarray
    pos_valid: np.ndarray  # (B, M) bool: same-class, misclassified queue entries
    pos_class: np.ndarray  # (M,) prototype each queue entry is assigned to
    pos_a: np.ndarray
    pos_b: np.ndarray
    pos_eps: np.ndarray


def _smallest_k(dist, k):
    """Row-wise indices of the k smallest entries, ascending, ties in index order."""
    B, M = dist.shape
    if k >= M:
        return np.argsort(dist, axis=1, kind="stable")
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1 : k]
    cand = dist <= kth
    exact = (cand.sum(axis=1) == k) & np.isfinite(kth[:, 0])
    out = np.empty((B, k), dtype=np.intp)
    if exact.any():
        rows = np.flatnonzero(exact)
        idx = np.nonzero(cand[rows])[1].reshape(len(rows), k)
        order = np.argsort(np.take_along_axis(dist[rows], idx, axis=1), axis=1, kind="stable")
        out[rows] = np.take_along_axis(idx, order, axis=1)
    if not exact.all():
        rows = np.flatnonzero(~exact)
        out[rows] = np.argsort(dist[rows], axis=1, kind="stable")[:, :k]
    return out


def _coefficients(eps, sp, pp):
    """a, b and the norm of (1-e) s + e p for unit s, given s.p and p.p."""
    sq = (1 - eps) ** 2 + 2 * eps * (1 - eps) * sp + eps**2 * pp
    norm = np.sqrt(np.maximum(sq, 0.0))
    ok = norm > 0
    safe = np.where(ok, norm, 1.0)
    return (1 - eps) / safe, eps / safe, ok


def mine_batch(
    g_anchor,
    y,
    queue_g,
    queue_f,
    queue_labels,
    P,
    gamma: int = GAMMA,
    E: float = E_MAX,
    rng=None,
    neg_eps=None,
    pos_eps=None,
    negatives: bool = True,
    positives: bool = True,
) -> BatchMining:
    check_upper_bound(E)
    if gamma < 1:
        raise ConfigError("gamma must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    g_anchor = np.asarray(g_anchor, dtype=np.float64)
    y = np.asarray(y)
    B, M = g_anchor.shape[0], len(queue_labels)
    P = np.asarray(P, dtype=np.float64)
    same = queue_labels[None, :] == y[:, None]
    pp = np.sum(P * P, axis=1)
    SP = queue_g @ P.T if M else np.empty((0, P.shape[0]))

    width = min(gamma, M) if negatives else 0
    if width:
        ng = np.linalg.norm(g_anchor, axis=1, keepdims=True)
        ns = np.linalg.norm(queue_g, axis=1)
        dist = 1.0 - (g_anchor @ queue_g.T) / (ng * ns[None, :])
        dist = np.where(same, np.inf, dist)
        neg_index = _smallest_k(dist, width)
        neg_valid = ~same[np.arange(B)[:, None], neg_index]
        if neg_eps is None:
            neg_eps = draw_eps(rng, E, (B, width))
        sp = SP[neg_index, y[:, None]]
        neg_a, neg_b, ok = _coefficients(neg_eps, sp, pp[y][:, None])
        if np.any(neg_valid & ~ok):
            log.warning("skipping zero-norm negative proto-instances")
        neg_valid &= ok
    else:
        neg_index = np.zeros((B, 0), dtype=np.intp)
        neg_valid = np.zeros((B, 0), dtype=bool)
        neg_eps = neg_a = neg_b = np.zeros((B, 0))

    if positives and M:
        pos_class = np.argmax(queue_f @ P.T, axis=1)
        pos_valid = same & (pos_class[None, :] != y[:, None])
        if pos_eps is None:
            pos_eps = draw_eps(rng, E, (B, M))
        sp = SP[np.arange(M), pos_class][None, :]
        pos_a, pos_b, ok = _coefficients(pos_eps, sp, pp[pos_class][None, :])
        if np.any(pos_valid & ~ok):
            log.warning("skipping zero-norm positive proto-instances")
        pos_valid &= ok
    else:
        pos_class = np.zeros(M, dtype=np.intp)
        pos_valid = np.zeros((B, M), dtype=bool)
        pos_eps = pos_a = pos_b = np.zeros((B, M))
    return BatchMining(neg_index, neg_valid, neg_a, neg_b, neg_eps, pos_valid, pos_class, pos_a, pos_b, pos_eps)
