from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowtree import metrics as M

from oracles import accuracy_by_hand, confusion_by_pairs, precision_by_hand


def test_perfect_is_diagonal():
    cm = M.confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert np.array_equal(cm, np.diag([1, 1, 2]))
    assert M.accuracy(cm) == 1.0 and M.average_precision(cm) == 1.0


def test_all_one_column():
    cm = M.confusion([0] * 6, [0, 1, 2, 0, 1, 0], 3)
    assert np.count_nonzero(cm.sum(axis=0)) == 1 and cm[:, 0].sum() == 6


def test_five_sample_hand_case():
    preds, truths = [0, 2, 1, 1, 0], [0, 1, 1, 2, 2]
    assert M.confusion(preds, truths, 3).tolist() == [[1, 0, 0], [0, 1, 1], [1, 1, 0]]


def test_two_by_two():
    cm = np.array([[3, 1], [2, 4]])
    assert M.accuracy(cm) == 0.7
    assert M.average_precision(cm) == (3 / 5 + 4 / 5) / 2


def test_collapse_accuracy_tracks_majority_share():
    cm = np.zeros((12, 12), dtype=int)
    cm[0, 0] = 29_500
    cm[1:, 0] = 20_500 // 11
    acc = M.accuracy(cm)
    assert acc == 29_500 / cm.sum()
    assert 0.55 < acc < 0.65


def test_collapse_precision_has_eleven_zero_terms():
    cm = np.zeros((12, 12), dtype=int)
    cm[0, 0] = 900
    cm[1:, 0] = 10
    prec = M.per_class_precision(cm)
    assert (prec[1:] == 0).all() and prec[0] == 900 / 1010
    assert M.average_precision(cm) == pytest.approx(900 / 1010 / 12, rel=1e-15)


def test_zero_diagonal():
    cm = np.array([[0, 2, 1], [3, 0, 0], [1, 1, 0]])
    assert M.average_precision(cm) == 0.0 and M.accuracy(cm) == 0.0


def test_errors():
    with pytest.raises(M.LengthMismatch):
        M.confusion([0, 1], [0], 2)
    with pytest.raises(M.LabelOutOfRange):
        M.confusion([0, 2], [0, 1], 2)
    with pytest.raises(M.EmptyMatrix):
        M.accuracy(np.zeros((3, 3), dtype=int))
    with pytest.raises(M.EmptyMatrix):
        M.average_precision(np.zeros((3, 3), dtype=int))


def test_random_small_matrices_match_hand_oracle(rng):
    for _ in range(20):
        k = int(rng.integers(2, 7))
        n = int(rng.integers(1, 40))
        preds, truths = rng.integers(0, k, n), rng.integers(0, k, n)
        cm = M.confusion(preds, truths, k)
        hand = confusion_by_pairs(preds.tolist(), truths.tolist(), k)
        assert cm.tolist() == hand
        assert M.accuracy(cm) == accuracy_by_hand(hand)
        assert M.average_precision(cm) == precision_by_hand(hand)


def exact_precision(cm):
    k = len(cm)
    terms = [Fraction(int(cm[i][i]), int(sum(r[i] for r in cm))) if sum(r[i] for r in cm) else Fraction(0) for i in range(k)]
    return sum(terms) / k


@given(st.integers(2, 12).flatmap(lambda k: st.lists(st.lists(st.integers(0, 50), min_size=k, max_size=k), min_size=k, max_size=k)))
def test_precision_close_to_rational_value(rows):
    cm = np.array(rows)
    if cm.sum() == 0:
        return
    assert abs(M.average_precision(cm) - float(exact_precision(rows))) <= 1e-15
    assert M.accuracy(cm) == float(Fraction(int(np.trace(cm)), int(cm.sum())))


@given(st.integers(0, 10**6), st.integers(2, 12))
def test_permutation_invariance(seed, k):
    rng = np.random.default_rng(seed)
    cm = rng.integers(0, 20, (k, k))
    cm[0, 0] += 1
    perm = rng.permutation(k)
    pm = cm[np.ix_(perm, perm)]
    assert M.accuracy(pm) == M.accuracy(cm)
    assert M.average_precision(pm) == pytest.approx(M.average_precision(cm), rel=1e-14)


def test_report_and_csv(tmp_path):
    cm = np.array([[3, 1], [2, 4]])
    rep = M.report(cm, ["A", "B"], "x", 7)
    assert rep["per_class"]["B"] == {"precision": 0.8, "recall": 4 / 6, "support": 6}
    assert rep["matrix"] == [[3, 1], [2, 4]] and rep["seed"] == 7
    M.write_matrix_csv(tmp_path / "m.csv", cm, ["A", "B"])
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "A,3,1"
