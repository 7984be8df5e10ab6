import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proco.metrics import (
    accuracy,
    confusion_matrix,
    imbalance_ratio,
    macro_f1,
    per_class_f1,
    per_class_recall,
    summarize,
)

CM = np.array([[5, 5], [0, 10]])


def test_accuracy_examples():
    assert accuracy(np.diag([3, 4, 5])) == 1.0
    assert accuracy(np.array([[0, 2], [3, 0]])) == 0.0
    assert accuracy(CM) == 0.75
    with pytest.raises(ValueError):
        accuracy(np.zeros((2, 2), int))


def test_macro_f1_hand_computed():
    # class 0: P=1, R=1/2, F1=2/3; class 1: P=2/3, R=1, F1=4/5
    f1, absent = per_class_f1(CM)
    np.testing.assert_allclose(f1, [2 / 3, 0.8], rtol=1e-15)
    assert absent == []
    assert macro_f1(CM) == pytest.approx((2 / 3 + 0.8) / 2, rel=1e-15)
    assert round(macro_f1(CM), 4) == 0.7333


def test_macro_f1_perfect_and_single_class():
    assert macro_f1(np.diag([4, 1, 7])) == 1.0
    assert macro_f1(np.array([[9]])) == 1.0


def test_absent_class_flagged_and_zero():
    cm = np.array([[3, 0, 0], [0, 2, 0], [0, 0, 0]])
    f1, absent = per_class_f1(cm)
    assert absent == [2]
    assert f1[2] == 0.0
    assert macro_f1(cm) == pytest.approx(2 / 3)


def test_recall_and_summary():
    np.testing.assert_allclose(per_class_recall(CM), [0.5, 1.0])
    s = summarize([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert s["accuracy"] == 0.75
    assert s["per_class_recall"] == [0.5, 1.0]


def test_confusion_matrix_layout():
    cm = confusion_matrix([0, 1, 1, 2], [0, 2, 1, 2], 3)
    assert cm.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 1]]


def test_imbalance_ratio_profiles():
    # profiles built to match the (classes, samples, ratio) triples 7/10015/58 and 5/3662/10
    isic = [6670, 1120, 1100, 500, 295, 215, 115]
    aptos = [1800, 1000, 382, 300, 180]
    assert (len(isic), sum(isic)) == (7, 10015)
    assert (len(aptos), sum(aptos)) == (5, 3662)
    assert imbalance_ratio(isic) == 58
    assert imbalance_ratio(aptos) == 10
    assert imbalance_ratio([58, 1]) == 58
    assert imbalance_ratio([10, 3, 1]) == 10
    assert imbalance_ratio([7, 7, 7]) == 1
    with pytest.raises(ValueError):
        imbalance_ratio([3, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_invariant_under_class_relabeling(C, seed):
    rng = np.random.default_rng(seed)
    cm = rng.integers(0, 20, (C, C))
    cm[0, 0] += 1
    perm = rng.permutation(C)
    permuted = cm[np.ix_(perm, perm)]
    assert accuracy(permuted) == pytest.approx(accuracy(cm))
    assert macro_f1(permuted) == pytest.approx(macro_f1(cm))
    assert macro_f1(cm) <= 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_macro_f1_one_iff_diagonal(C, seed):
    rng = np.random.default_rng(seed)
    cm = np.diag(rng.integers(1, 20, C))
    assert macro_f1(cm) == 1.0
    i, j = rng.choice(C, 2, replace=False)
    cm[i, j] += 1
    assert macro_f1(cm) < 1.0
