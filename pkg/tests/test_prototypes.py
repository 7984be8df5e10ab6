import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proco.errors import DomainError
from proco.prototypes import (
    PrototypeBank,
    batch_calibration_factor,
    init_prototypes,
    predict,
    recalibrated_logit,
    update_calibration,
    update_from_batch,
)


def test_calibration_factor_examples():
    P = np.array([1.0, 0.0])
    assert batch_calibration_factor(np.zeros((3, 2)), P) == 0.5
    assert batch_calibration_factor(np.array([[800.0, 0.0]]), P) > 1 - 1e-12
    # logits (0, ln 3): sigmoid = 1/2 and 3/4
    f = np.array([[0.0, 5.0], [math.log(3), 1.0]])
    assert batch_calibration_factor(f, P) == pytest.approx((0.5 + 0.75) / 2, abs=1e-15)
    assert batch_calibration_factor(np.zeros((0, 2)), P) is None


def test_update_single_step_exact():
    bank = init_prototypes(2, 3, seed=0)
    update_calibration(bank, 0, 0.5)
    assert bank.calib[0] == 0.95 * 0.01 + 0.05 * 0.5
    assert bank.calib[0] == pytest.approx(0.0345, abs=1e-15)
    assert bank.calib[1] == 0.01


def test_update_fixed_point():
    bank = init_prototypes(1, 2, seed=0)
    for _ in range(10):
        update_calibration(bank, 0, 0.01)
    assert bank.calib[0] == pytest.approx(0.01, rel=1e-15)


def test_geometric_convergence():
    bank = init_prototypes(1, 2, seed=0)
    a = 0.7
    gap0 = abs(bank.calib[0] - a)
    for t in range(1, 200):
        update_calibration(bank, 0, a)
        assert abs(bank.calib[0] - a) == pytest.approx(gap0 * 0.95**t, rel=1e-9, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_calibration_stays_in_open_interval(beta, seed):
    rng = np.random.default_rng(seed)
    bank = PrototypeBank(np.ones((1, 2)), np.array([0.01]), beta)
    for w in rng.uniform(0, 1, 500) ** rng.choice([1, 30]):
        w = min(max(w, np.nextafter(0, 1)), np.nextafter(1, 0))
        update_calibration(bank, 0, w)
        assert 0 < bank.calib[0] < 1


def test_update_from_batch_skips_absent_classes():
    bank = init_prototypes(3, 2, seed=0)
    f = np.zeros((4, 2))
    updated = update_from_batch(bank, f, np.array([0, 0, 2, 2]))
    assert updated == [0, 2]
    assert bank.calib[1] == 0.01
    assert bank.calib[0] == pytest.approx(0.95 * 0.01 + 0.05 * 0.5)


def test_recalibrated_logit():
    f, p = np.array([1.0, 2.0]), np.array([0.5, 0.25])
    assert recalibrated_logit(f, p, 1.0) == 1.0
    assert recalibrated_logit(np.array([2.0]), np.array([1.0]), math.exp(-1)) == pytest.approx(1.0, abs=1e-15)
    vals = [recalibrated_logit(f, p, w) for w in (0.1, 0.3, 0.9)]
    assert vals == sorted(vals)
    with pytest.raises(DomainError):
        recalibrated_logit(f, p, 0.0)


@given(st.floats(-30, 30), st.floats(1e-6, 1 - 1e-6))
def test_exponent_identity(logit, w):
    lhs = math.exp(recalibrated_logit(np.array([logit]), np.array([1.0]), w))
    assert lhs == pytest.approx(w * math.exp(logit), rel=1e-12)


def test_predict_examples():
    P = np.eye(4)
    assert predict(np.array([0, 0, 1.0, 0]), P) == 2
    assert predict(np.zeros(4), P) == 0
    rng = np.random.default_rng(0)
    for _ in range(200):
        P = rng.standard_normal((6, 5))
        f = rng.standard_normal(5)
        logits = [float(f @ p) for p in P]
        best = 0
        for c in range(6):
            if logits[c] > logits[best]:
                best = c
        assert predict(f, P) == best


def test_predict_ignores_calibration():
    bank = init_prototypes(3, 4, seed=1)
    f = np.random.default_rng(2).standard_normal((20, 4))
    before = predict(f, bank)
    bank.calib[:] = [0.9, 1e-6, 0.5]
    np.testing.assert_array_equal(predict(f, bank), before)


def test_init_prototypes():
    bank = init_prototypes(5, 7, seed=3)
    assert np.all(bank.calib == 0.01)
    np.testing.assert_allclose(np.linalg.norm(bank.P, axis=1), 1.0, atol=1e-12)
    again = init_prototypes(5, 7, seed=3)
    np.testing.assert_array_equal(bank.P, again.P)
