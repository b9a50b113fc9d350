from fractions import Fraction as F

import hypothesis.strategies as st
import pytest
from hypothesis import given

from driftwatch.rates import (
    RATES,
    ConfusionCounts,
    ConfusionProbMatrix,
    RateKind,
    check_label,
    empirical_rate,
    influenced_rates,
    rate_denominator,
)

labels = st.integers(0, 1)


def test_fresh_counts_give_half_for_every_rate():
    c = ConfusionCounts()
    assert c.total() == 4
    for kind in RATES:
        assert empirical_rate(c, kind) == 0.5
        assert rate_denominator(c, kind) == 2


def test_add_increments_pred_true_cell():
    c = ConfusionCounts()
    c.add(y=1, yhat=0)
    assert c.c == [[1, 2], [1, 1]]
    c.add(y=0, yhat=1)
    assert c.c == [[1, 2], [2, 1]]


def test_rate_formulas():
    c = ConfusionCounts([[7, 2], [3, 5]])  # TN FN / FP TP
    assert empirical_rate(c, RateKind.TPR) == 5 / 7
    assert empirical_rate(c, RateKind.TNR) == 7 / 10
    assert empirical_rate(c, RateKind.PPV) == 5 / 8
    assert empirical_rate(c, RateKind.NPV) == 7 / 9


def test_counts_reject_bad_shapes():
    with pytest.raises(ValueError):
        ConfusionCounts([[1, 1, 1], [1, 1]])
    with pytest.raises(ValueError):
        ConfusionCounts([[0, 1], [1, 1]])


@pytest.mark.parametrize("bad", [2, -1, 0.5, "1", None])
def test_check_label_rejects(bad):
    with pytest.raises(ValueError):
        check_label(bad)


def test_influenced_rates_table():
    assert influenced_rates(1, 1) == (RateKind.TPR, RateKind.PPV)
    assert influenced_rates(0, 0) == (RateKind.TNR, RateKind.NPV)
    assert influenced_rates(1, 0) == (RateKind.TPR, RateKind.NPV)
    assert influenced_rates(0, 1) == (RateKind.TNR, RateKind.PPV)


@given(st.lists(st.tuples(labels, labels), max_size=40), labels, labels)
def test_exactly_the_influenced_rates_change(history, y, yhat):
    c = ConfusionCounts()
    for a, b in history:
        c.add(a, b)
    before_num = {k: empirical_rate(c, k) for k in RATES}
    before_den = {k: rate_denominator(c, k) for k in RATES}
    c.add(y, yhat)
    touched = set(influenced_rates(y, yhat))
    for k in RATES:
        if k in touched:
            assert rate_denominator(c, k) == before_den[k] + 1
        else:
            assert rate_denominator(c, k) == before_den[k]
            assert empirical_rate(c, k) == before_num[k]


def test_prob_matrix_rates_exact():
    cp = ConfusionProbMatrix.from_nested([[F(3, 10), F(1, 10)], [F(2, 10), F(4, 10)]])
    assert cp.rate(RateKind.TPR) == F(4, 5)
    assert cp.rate(RateKind.TNR) == F(3, 5)
    assert cp.rate(RateKind.PPV) == F(2, 3)
    assert cp.rate(RateKind.NPV) == F(3, 4)
    assert cp.accuracy() == F(7, 10)
    assert cp.positive_fraction() == F(1, 2)
    assert cp.cells() == (0.3, 0.1, 0.2, 0.4)
    assert cp.as_lists() == [["3/10", "1/10"], ["1/5", "2/5"]]


@pytest.mark.parametrize(
    "rows",
    [
        [[0.5, 0.5], [0.5, 0.5]],
        [[0.5, 0.5], [0.0, 0.0]],
        [[-0.1, 0.6], [0.25, 0.25]],
        [[1.0], [0.0]],
    ],
)
def test_prob_matrix_validation(rows):
    with pytest.raises(ValueError):
        ConfusionProbMatrix.from_nested(rows)
