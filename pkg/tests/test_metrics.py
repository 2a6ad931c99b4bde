import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vleer import metrics
from vleer.errors import ValidationError

from .oracles import pairwise_auc


def test_accuracy_perfect():
    assert metrics.accuracy([0, 1, 2], [0, 1, 2]) == 1.0


def test_accuracy_all_wrong():
    assert metrics.accuracy([0, 0], [1, 1]) == 0.0


def test_accuracy_hand_case():
    assert metrics.accuracy([0, 0, 1, 1, 1], [0, 1, 1, 1, 0]) == pytest.approx(0.6)


def test_accuracy_length_mismatch():
    with pytest.raises(ValidationError):
        metrics.accuracy([0, 1], [0])


def test_weighted_f1_perfect():
    assert metrics.weighted_f1([0, 1, 1], [0, 1, 1]) == 1.0


def test_weighted_f1_hand_case():
    # class0 F1=0.5 (support 2), class1 F1=2/3 (support 3)
    got = metrics.weighted_f1([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
    assert got == pytest.approx((2 * 0.5 + 3 * (2 / 3)) / 5)
    assert got == pytest.approx(0.6)


def test_weighted_f1_zero_division_class():
    # class 1 never predicted and never correct: F1 contribution 0
    # class0: tp=2 fp=1 fn=0 -> F1=4/5, support 2; class1: F1=0, support 1
    got = metrics.weighted_f1([0, 0, 1], [0, 0, 0])
    assert got == pytest.approx(8 / 15)


def test_auc_hand_case():
    got = metrics.binary_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8])
    assert got == pytest.approx(0.75)


def test_auc_perfect_separation():
    assert metrics.binary_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0


def test_auc_all_ties():
    assert metrics.binary_auc([0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5]) == pytest.approx(0.5)


def test_auc_single_class_undefined():
    with pytest.raises(ValidationError):
        metrics.binary_auc([1, 1], [0.2, 0.3])
    with pytest.raises(ValidationError):
        metrics.auc([0, 0], np.array([[0.5, 0.5], [0.5, 0.5]]))


def test_auc_probability_rows():
    probs = np.array([[0.9, 0.1], [0.6, 0.4], [0.65, 0.35], [0.2, 0.8]])
    got = metrics.auc([0, 0, 1, 1], probs)
    assert got == pytest.approx(0.75)


def test_multiclass_macro_ovr():
    y = [0, 1, 2, 0, 1, 2]
    probs = np.array(
        [
            [0.8, 0.1, 0.1],
            [0.1, 0.8, 0.1],
            [0.1, 0.1, 0.8],
            [0.6, 0.3, 0.1],
            [0.2, 0.6, 0.2],
            [0.3, 0.1, 0.6],
        ]
    )
    per_class = [
        pairwise_auc([1 if t == c else 0 for t in y], probs[:, c]) for c in range(3)
    ]
    assert metrics.auc(y, probs) == pytest.approx(float(np.mean(per_class)))


@settings(deadline=None, max_examples=80)
@given(st.integers(0, 10**6), st.integers(2, 12))
def test_auc_matches_pairwise_oracle(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    if len(set(y.tolist())) < 2:
        y[0], y[1] = 0, 1
    scores = rng.integers(0, 5, size=n) / 4.0  # quantized: plenty of ties
    assert metrics.binary_auc(y, scores) == pytest.approx(
        pairwise_auc(y, scores), abs=1e-12
    )


def test_auc_monotone_transform_invariance():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, size=20)
    y[:2] = [0, 1]
    scores = rng.uniform(0, 1, size=20)
    base = metrics.binary_auc(y, scores)
    assert metrics.binary_auc(y, np.exp(3 * scores)) == pytest.approx(base)


def test_weighted_equals_plain_f1_when_balanced():
    y_true = [0, 0, 1, 1]
    y_pred = [0, 1, 1, 0]
    # both classes: support 2, F1 = 0.5 each
    assert metrics.weighted_f1(y_true, y_pred) == pytest.approx(0.5)


def test_accuracy_one_implies_f1_one():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 3, size=30)
    assert metrics.accuracy(y, y) == 1.0
    assert metrics.weighted_f1(y, y) == 1.0


def test_summarize_seeds():
    runs = [{"acc": 0.8, "f1": 0.7}, {"acc": 0.9, "f1": 0.8}]
    got = metrics.summarize_seeds(runs)
    assert got["acc"]["mean"] == pytest.approx(0.85)
    assert got["acc"]["std"] == pytest.approx(0.05)
