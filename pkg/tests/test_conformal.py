import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuropipe import conformal
from neuropipe.errors import DataError, LeakageError


class Scorer:
    """Model stub whose P(1) is the first column squashed through a logistic."""

    def __init__(self, fit_ids=(), slope=1.0):
        self.fit_ids = tuple(fit_ids)
        self.slope = slope

    def decision_score(self, rows):
        return 1.0 / (1.0 + np.exp(-self.slope * np.asarray(rows)[:, 0]))


class Constant:
    def __init__(self, p):
        self.p = p

    def decision_score(self, rows):
        return np.full(len(rows), self.p)


def test_calibration_examples():
    perfect = conformal.calibrate(Constant(1.0), np.zeros((4, 1)), [1, 1, 1, 1])
    np.testing.assert_array_equal(perfect.scores, 0.0)
    half = conformal.calibrate(Constant(0.5), np.zeros((3, 1)), [0, 1, 0])
    np.testing.assert_array_equal(half.scores, 0.5)
    mixed = conformal.calibrate(Constant(0.0), np.zeros((3, 1)), [1, 1, 1])
    assert mixed.n_cal == 3
    rows = np.log(np.array([[0.9 / 0.1], [0.7 / 0.3], [0.8 / 0.2]]))
    cal = conformal.calibrate(Scorer(), rows, [1, 1, 1])
    np.testing.assert_allclose(cal.scores, [0.1, 0.2, 0.3])
    assert list(cal.scores) == sorted(cal.scores)
    with pytest.raises(ValueError):
        cal.scores[0] = 1.0


def test_p_value_examples():
    cal = conformal.ConformalCalibration(Constant(0.5), np.linspace(0.1, 0.5, 9))
    assert conformal.p_value_from_score(cal, 0.9) == pytest.approx(1 / 10)
    assert conformal.p_value_from_score(cal, 0.0) == 1.0
    # ties count towards the p-value
    assert conformal.p_value_from_score(cal, 0.5) == pytest.approx(2 / 10)
    with pytest.raises(DataError, match="empty"):
        conformal.calibrate(Constant(0.5), np.zeros((0, 1)), [])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_p_value_bounds_and_monotonicity(scores, a, b):
    cal = conformal.ConformalCalibration(None, np.sort(np.array(scores)))
    lo, hi = min(a, b), max(a, b)
    pl, ph = conformal.p_value_from_score(cal, lo), conformal.p_value_from_score(cal, hi)
    assert ph <= pl
    for p in (pl, ph):
        assert 1 / (cal.n_cal + 1) <= p <= 1


def test_prediction_sets():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 1))
    y = (rng.random(200) < 1 / (1 + np.exp(-x[:, 0]))).astype(int)
    cal = conformal.calibrate(Scorer(), x, y)
    # epsilon close to 0 keeps both labels since every p-value >= 1/(n+1)
    assert conformal.prediction_set(cal, [[0.3]], epsilon=1e-4) == [0, 1]
    flat = conformal.calibrate(Constant(0.5), x, y)
    assert conformal.prediction_set(flat, [[2.0]], epsilon=0.1) == [0, 1]
    with pytest.raises(DataError):
        conformal.prediction_set(cal, [[0.0]], epsilon=1.0)


def coverage(eps, trials=2000, n_cal=99, seed=0):
    rng = np.random.default_rng(seed)
    model = Scorer(slope=3.0)
    hits = 0
    for _ in range(trials):
        x = rng.standard_normal((n_cal + 1, 1))
        y = (rng.random(n_cal + 1) < 1 / (1 + np.exp(-3 * x[:, 0]))).astype(int)
        cal = conformal.calibrate(model, x[:-1], y[:-1], epsilon=eps)
        hits += int(y[-1]) in conformal.prediction_set(cal, x[-1:])
    return hits / trials


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_coverage_validity(eps):
    assert coverage(eps, trials=600, seed=int(eps * 100)) >= 1 - eps - 0.05


def test_confident_classifier_gives_singletons():
    rng = np.random.default_rng(4)
    x = rng.choice([-8.0, 8.0], size=(300, 1))
    y = (x[:, 0] > 0).astype(int)
    cal = conformal.calibrate(Scorer(), x[:200], y[:200])
    sets = [conformal.prediction_set(cal, x[i:i + 1]) for i in range(200, 300)]
    assert np.mean([s == [int(y[200 + i])] for i, s in enumerate(sets)]) >= 0.9


def test_overlap_with_training_raises():
    model = Scorer(fit_ids=("a", "b", "c"))
    with pytest.raises(LeakageError) as info:
        conformal.calibrate(model, np.zeros((2, 1)), [0, 1], ids=["c", "d"])
    assert info.value.violations[0].leaked_ids == ("c",)
    assert conformal.calibrate(model, np.zeros((2, 1)), [0, 1], ids=["d", "e"]).n_cal == 2
