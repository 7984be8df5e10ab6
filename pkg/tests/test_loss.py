import math

import numpy as np
import pytest

from proco import autodiff as ad
from proco.loss import (
    Anchor,
    ContrastSets,
    LossConfig,
    batch_loss,
    batch_proto_loss,
    cross_entropy,
    info_nce,
    mine_for_batch,
    proto_loss,
    proto_loss_naive,
)
from proco.prototypes import PrototypeBank
from proco.queue import SampleQueue


def units(rng, n, k):
    v = rng.standard_normal((n, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_instance(rng, k=8, C=4, nq=16, scale=1.0):
    g = units(rng, 1, k)[0]
    f = np.abs(rng.standard_normal(k)) * scale
    labels = rng.integers(C, size=nq)
    y = int(rng.integers(C))
    feats = units(rng, nq, k)
    sets = ContrastSets(
        neg_feats=feats[labels != y],
        pos_feats=feats[labels == y],
        P=rng.standard_normal((C, k)),
        y=y,
        calib=rng.uniform(0.01, 0.99, C),
    )
    return g, f, sets


def softmax_ce(logits, y):
    m = max(logits)
    return -(logits[y] - m - math.log(sum(math.exp(l - m) for l in logits)))


def test_empty_negatives_gives_zero():
    rng = np.random.default_rng(0)
    g, f, sets = random_instance(rng, C=1)
    sets.y = 0
    sets.neg_feats = np.empty((0, 8))
    assert float(proto_loss(g, f, sets).value) == 0.0


def test_reduces_to_cross_entropy():
    rng = np.random.default_rng(1)
    for _ in range(50):
        g, f, sets = random_instance(rng)
        sets.neg_feats = np.empty((0, 8))
        sets.pos_feats = np.empty((0, 8))
        sets.calib = np.full(4, 0.3)
        logits = (sets.P @ f).tolist()
        assert float(proto_loss(g, f, sets, tau=1.0).value) == pytest.approx(softmax_ce(logits, sets.y), abs=1e-10)
        assert float(cross_entropy(f, sets.P, sets.y).value) == pytest.approx(softmax_ce(logits, sets.y), abs=1e-10)


@pytest.mark.parametrize("tau", [1.0, 0.2])
def test_matches_naive_form(tau):
    rng = np.random.default_rng(2)
    for _ in range(100):
        g, f, sets = random_instance(rng)
        naive = proto_loss_naive(g, f, sets, tau)
        assert float(proto_loss(g, f, sets, tau).value) == pytest.approx(naive, rel=1e-8)


def test_broadcast_calibration_mode_matches_naive():
    rng = np.random.default_rng(3)
    g, f, sets = random_instance(rng)
    sets.calib_mode = "broadcast"
    assert float(proto_loss(g, f, sets).value) == pytest.approx(proto_loss_naive(g, f, sets), rel=1e-8)


def test_finite_for_huge_logits():
    rng = np.random.default_rng(4)
    for s in (-500.0, 500.0):
        g, f, sets = random_instance(rng)
        sets.P = np.full((4, 8), s / 8) / np.maximum(f, 1e-3)[None, :] * (f > 0)
        value = float(proto_loss(g, f, sets).value)
        assert np.isfinite(value) and value >= 0


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g, f, sets = random_instance(rng)

        def loss(tape, p):
            s = ContrastSets(sets.neg_feats, sets.pos_feats, p["P"], sets.y, sets.calib)
            return proto_loss(p["g"], p["f"], s, tau=0.5)

        rep = ad.grad_check(loss, {"g": g, "f": f, "P": sets.P})
        assert rep.passed, rep.failures[:3]


def test_monotone_in_similarities():
    rng = np.random.default_rng(6)
    g, f, sets = random_instance(rng)
    base = float(proto_loss(g, f, sets).value)
    bumped = ContrastSets(sets.neg_feats.copy(), sets.pos_feats, sets.P, sets.y, sets.calib)
    # move one negative toward g: its similarity rises
    bumped.neg_feats[0] = bumped.neg_feats[0] + 0.1 * g
    assert float(proto_loss(g, f, bumped).value) > base
    pushed = ContrastSets(sets.neg_feats, sets.pos_feats.copy(), sets.P, sets.y, sets.calib)
    pushed.pos_feats[0] = pushed.pos_feats[0] + 0.1 * g
    assert float(proto_loss(g, f, pushed).value) < base


def test_permutation_invariant():
    rng = np.random.default_rng(7)
    g, f, sets = random_instance(rng)
    base = float(proto_loss(g, f, sets).value)
    perm = ContrastSets(sets.neg_feats[::-1], sets.pos_feats[::-1], sets.P, sets.y, sets.calib)
    assert float(proto_loss(g, f, perm).value) == pytest.approx(base, rel=1e-13)


def test_zero_iff_no_negatives():
    rng = np.random.default_rng(8)
    g, f, sets = random_instance(rng)
    assert float(proto_loss(g, f, sets).value) > 0


def test_cross_entropy_examples():
    P = np.eye(3)
    assert float(cross_entropy(np.zeros(3), P, 1).value) == pytest.approx(math.log(3), abs=1e-15)
    assert float(cross_entropy(np.array([0.0, 60.0, 0.0]), P, 1).value) < 1e-25


def test_info_nce_examples():
    rng = np.random.default_rng(9)
    g, pos = units(rng, 2, 4)
    assert float(info_nce(g, pos, np.empty((0, 4))).value) == pytest.approx(0.0, abs=1e-15)
    assert float(info_nce(g, pos, pos[None, :]).value) == pytest.approx(math.log(2), abs=1e-15)
    negs = units(rng, 7, 4)
    for tau in (1.0, 0.3):
        num = math.exp(g @ pos / tau)
        naive = -math.log(num / (num + sum(math.exp(g @ n / tau) for n in negs)))
        assert float(info_nce(g, pos, negs, tau).value) == pytest.approx(naive, rel=1e-12)


def _queue_and_bank(rng, M=24, k=6, C=4):
    q = SampleQueue(M, k, C)
    q.enqueue_arrays(units(rng, M, k), np.abs(rng.standard_normal((M, k))), rng.integers(C, size=M))
    bank = PrototypeBank(rng.standard_normal((C, k)), rng.uniform(0.05, 0.95, C))
    return q, bank


def _anchor(rng, k=6, C=4):
    return Anchor(units(rng, 1, k)[0], np.abs(rng.standard_normal(k)), int(rng.integers(C)))


def test_batch_loss_reductions():
    rng = np.random.default_rng(10)
    q, bank = _queue_and_bank(rng)
    cfg = LossConfig(gamma=5, proto_instances=False)
    a, b = _anchor(rng), _anchor(rng)
    single = batch_loss([a], q, bank, cfg)
    assert batch_loss([a, a, a], q, bank, cfg) == pytest.approx(single, rel=1e-14)
    both = batch_loss([a, b], q, bank, cfg)
    assert both == pytest.approx((single + batch_loss([b], q, bank, cfg)) / 2, rel=1e-14)
    assert batch_loss([b, a], q, bank, cfg) == pytest.approx(both, rel=1e-14)


@pytest.mark.parametrize("proto_instances", [True, False])
@pytest.mark.parametrize("recalibration", [True, False])
def test_vectorized_batch_matches_per_anchor(proto_instances, recalibration):
    rng = np.random.default_rng(12)
    q, bank = _queue_and_bank(rng)
    cfg = LossConfig(tau=0.5, gamma=5, E=0.4, proto_instances=proto_instances, recalibration=recalibration)
    anchors = [_anchor(rng) for _ in range(7)]
    G = np.stack([a.g for a in anchors])
    F = np.stack([a.f for a in anchors])
    y = np.array([a.y for a in anchors])
    mining = mine_for_batch(G, y, q, bank.P, cfg, np.random.default_rng(0))
    fast = float(batch_proto_loss(G, F, y, q.g, q.labels, mining, bank.P, bank.calib, cfg).value)
    for i, a in enumerate(anchors):
        if proto_instances:
            a.neg_eps = mining.neg_eps[i]
            a.pos_eps = mining.pos_eps[i, q.labels == a.y]
    assert fast == pytest.approx(batch_loss(anchors, q, bank, cfg), rel=1e-10)


def test_vectorized_batch_gradients():
    rng = np.random.default_rng(13)
    q, bank = _queue_and_bank(rng, M=12)
    cfg = LossConfig(tau=0.7, gamma=3)
    G, F = units(rng, 3, 6), np.abs(rng.standard_normal((3, 6)))
    y = np.array([0, 1, 1])
    mining = mine_for_batch(G, y, q, bank.P, cfg, np.random.default_rng(1))

    def f(tape, p):
        return batch_proto_loss(p["G"], p["F"], y, q.g, q.labels, mining, p["P"], bank.calib, cfg, P_mix=bank.P)

    rep = ad.grad_check(f, {"G": G, "F": F, "P": bank.P})
    assert rep.passed, rep.failures[:3]


def test_empty_queue_batch_loss_is_prototype_only():
    rng = np.random.default_rng(14)
    q = SampleQueue(8, 6, 4)
    bank = PrototypeBank(rng.standard_normal((4, 6)), np.full(4, 0.5))
    cfg = LossConfig(tau=1.0)
    G, F = units(rng, 3, 6), np.abs(rng.standard_normal((3, 6)))
    y = np.array([0, 2, 3])
    mining = mine_for_batch(G, y, q, bank.P, cfg, rng)
    got = float(batch_proto_loss(G, F, y, q.g, q.labels, mining, bank.P, bank.calib, cfg).value)
    want = np.mean([softmax_ce((bank.P @ F[i]).tolist(), y[i]) for i in range(3)])
    assert got == pytest.approx(want, rel=1e-12)
