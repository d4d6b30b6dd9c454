import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlom import QwkReport, ScoreScale, ValidationError, macro_average, qwk
from dlom.metrics import confusion_matrix


def brute_force_qwk(preds, golds, n_levels, denominator=None):
    """Direct double loop over every (i, j) cell."""
    if denominator is None:
        denominator = (n_levels - 1) ** 2
    n = len(preds)
    O = [[0] * n_levels for _ in range(n_levels)]
    for g, p in zip(golds, preds):
        O[g][p] += 1
    rows = [sum(O[i]) for i in range(n_levels)]
    cols = [sum(O[i][j] for i in range(n_levels)) for j in range(n_levels)]
    num = den = 0.0
    for i in range(n_levels):
        for j in range(n_levels):
            w = (i - j) ** 2 / denominator
            num += w * O[i][j]
            den += w * rows[i] * cols[j] / n
    return None if den == 0 else 1 - num / den


def test_identical_sequences():
    assert qwk([0, 1, 2, 3, 1], [0, 1, 2, 3, 1], ScoreScale(3)) == 1.0


def test_degenerate_flag():
    assert qwk([2, 2, 2], [2, 2, 2], ScoreScale(3)) is None


def test_worked_example():
    golds, preds = [0, 1, 2, 3, 1], [1, 1, 2, 3, 0]
    expected = brute_force_qwk(preds, golds, 4)
    assert qwk(preds, golds, ScoreScale(3)) == pytest.approx(expected, abs=1e-12)


def test_against_brute_force(rng):
    for _ in range(300):
        k = int(rng.integers(2, 13))
        n = int(rng.integers(1, 60))
        golds = rng.integers(0, k + 1, n).tolist()
        preds = rng.integers(0, k + 1, n).tolist()
        fast = qwk(preds, golds, ScoreScale(k))
        slow = brute_force_qwk(preds, golds, k + 1)
        if slow is None:
            assert fast is None
        else:
            assert abs(fast - slow) < 1e-12


levels = st.lists(st.integers(0, 6), min_size=2, max_size=40)


@given(levels, st.data())
def test_symmetric(a, data):
    b = data.draw(st.lists(st.integers(0, 6), min_size=len(a), max_size=len(a)))
    qa, qb = qwk(a, b, ScoreScale(6)), qwk(b, a, ScoreScale(6))
    assert (qa is None and qb is None) or qa == pytest.approx(qb, abs=1e-12)


@given(levels, st.floats(0.01, 1000))
def test_weight_normalization_cancels(a, denom):
    b = list(reversed(a))
    q1, q2 = qwk(a, b, ScoreScale(6)), qwk(a, b, ScoreScale(6), weight_denominator=denom)
    assert (q1 is None and q2 is None) or abs(q1 - q2) < 1e-12


def test_offset_does_not_change_kappa():
    scale = ScoreScale(10, 2)
    golds = np.array([2, 5, 12, 7, 9, 3])
    preds = np.array([3, 5, 11, 8, 9, 2])
    assert qwk(preds - 2, golds - 2, scale) == qwk(preds - 2, golds - 2, ScoreScale(10))


def test_validation():
    with pytest.raises(ValidationError):
        qwk([0, 1], [0], ScoreScale(2))
    with pytest.raises(ValidationError):
        qwk([0, 3], [0, 1], ScoreScale(2))
    with pytest.raises(ValidationError):
        qwk([], [], ScoreScale(2))


def test_confusion_rows_are_gold():
    c = confusion_matrix([0, 0, 1], [1, 1, 1], ScoreScale(1))
    np.testing.assert_array_equal(c, [[0, 2], [0, 1]])
    assert c.sum() == 3


def test_macro_average():
    assert macro_average({"t1": 0.5, "t2": 0.7}) == pytest.approx(0.6)
    assert macro_average({"t1": 0.492}) == 0.492
    assert macro_average({"t1": 0.4, "t2": None}) == 0.4
    with pytest.raises(ValidationError):
        macro_average({"t1": None})


def test_macro_average_reported_row():
    # One reported per-trait row over ten traits and its stated average.
    row = {"LA": 0.594, "LD": 0.544, "CH": 0.562, "GA": 0.580, "GD": 0.587,
           "PA": 0.498, "AC": 0.251, "JP": 0.425, "OS": 0.517, "EL": 0.477}
    assert round(macro_average(row), 3) == pytest.approx(0.504, abs=5e-4)


def test_qwk_report_flags_degenerate():
    rep = QwkReport({"a": 0.5, "b": None, "c": 0.7})
    assert rep.degenerate == ["b"]
    assert rep.macro_avg == pytest.approx(0.6)
