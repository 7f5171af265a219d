import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdecide.conformal import (
    APS,
    LAC,
    PredictionSet,
    ScoreFn,
    SplitConformalClassifier,
    calibrate,
    coverage,
    exchangeable_ranks,
    group_coverage,
    predict_set,
    replicate_coverage,
    score,
    score_matrix,
    set_size_stats,
)
from cpdecide.dgp import TabularDGP
from cpdecide.exceptions import (
    AlphaOutOfRangeError,
    EmptyScoresError,
    LabelOutOfRangeError,
    LengthMismatchError,
    MissingUniformError,
    NotFittedError,
)
from cpdecide.predictor import OraclePredictor
from cpdecide.probcore import Distribution


def test_lac_and_aps_scores():
    d = Distribution([0.5, 0.3, 0.2])
    assert score(LAC, d, 0) == pytest.approx(0.5)
    assert score(APS, d, 0) == pytest.approx(0.5)
    assert score(APS, d, 1) == pytest.approx(0.8)
    assert score(APS, d, 2) == pytest.approx(1.0)
    assert score(ScoreFn("aps", True), d, 1, u=0.5) == pytest.approx(0.8 - 0.15)
    with pytest.raises(MissingUniformError):
        score(ScoreFn("aps", True), d, 1)
    with pytest.raises(LabelOutOfRangeError):
        score(LAC, d, 3)


def test_aps_ties_break_by_index():
    S = score_matrix(APS, [[0.4, 0.4, 0.2]])
    np.testing.assert_allclose(S, [[0.4, 0.8, 1.0]])


def _brute_aps(p):
    out = []
    for y in range(len(p)):
        # mass of labels ranked strictly ahead of y, plus y itself
        ahead = sum(p[j] for j in range(len(p)) if p[j] > p[y] or (p[j] == p[y] and j < y))
        out.append(ahead + p[y])
    return out


@given(st.lists(st.integers(0, 5), min_size=2, max_size=6).filter(lambda w: sum(w) > 0))
def test_aps_matches_brute_force(w):
    p = np.array(w, float) / sum(w)
    np.testing.assert_allclose(score_matrix(APS, p[None, :])[0], _brute_aps(p), atol=1e-12)


def test_calibrate_examples():
    scores = np.arange(1, 10) / 10.0  # 0.1 .. 0.9, n = 9
    assert calibrate(scores, 0.1) == pytest.approx(0.9)  # k = ceil(0.9 * 10) = 9
    assert calibrate(scores, 0.2) == pytest.approx(0.8)  # k = 8
    assert calibrate(scores, 0.05) == math.inf  # k = 10 > n
    with pytest.raises(EmptyScoresError):
        calibrate([], 0.1)
    with pytest.raises(AlphaOutOfRangeError):
        calibrate([0.1], 1.0)
    with pytest.raises(AlphaOutOfRangeError):
        calibrate([0.1], 0.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_calibrate_rank_property(scores, alpha):
    q = calibrate(scores, alpha)
    n = len(scores)
    if math.isinf(q):
        assert math.ceil(round((1 - alpha) * (n + 1), 9)) > n
    else:
        s = np.asarray(scores)
        # at least ceil((1-alpha)(n+1)) scores are <= q
        assert np.sum(s <= q) >= math.ceil(round((1 - alpha) * (n + 1), 9))
        assert q in s


def test_prediction_set_basics():
    s = PredictionSet.from_labels([0, 2], 3)
    assert s.labels == (0, 2) and len(s) == 2 and 2 in s and 1 not in s
    assert PredictionSet.full(3).is_full
    assert PredictionSet.from_labels([], 3).is_empty
    np.testing.assert_array_equal(s.indicator(), [True, False, True])


def test_classifier_includes_ties():
    est = SplitConformalClassifier.from_threshold(0.5, 3)
    M = est.predict([[0.5, 0.3, 0.2]])
    np.testing.assert_array_equal(M, [[True, False, False]])
    est = SplitConformalClassifier.from_threshold(0.7, 3)
    np.testing.assert_array_equal(est.predict([[0.5, 0.3, 0.2]]), [[True, True, False]])


def test_classifier_infinite_threshold_gives_full_sets():
    est = SplitConformalClassifier(alpha=0.05).fit([[0.9, 0.1]] * 5, [0, 1, 0, 1, 0])
    assert math.isinf(est.threshold_)
    assert est.predict([[0.99, 0.01]]).all()


def test_classifier_fit_matches_calibrate():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(4), size=200)
    y = rng.integers(0, 4, 200)
    est = SplitConformalClassifier("lac", 0.1).fit(P, y)
    assert est.threshold_ == calibrate(1 - P[np.arange(200), y], 0.1)
    assert est.n_cal_ == 200 and est.n_classes_ == 4


def test_classifier_validation():
    with pytest.raises(NotFittedError):
        SplitConformalClassifier().predict([[0.5, 0.5]])
    with pytest.raises(LengthMismatchError):
        SplitConformalClassifier().fit([[0.5, 0.5]], [0, 1])
    with pytest.raises(MissingUniformError):
        SplitConformalClassifier("aps", randomized=True).fit([[0.5, 0.5]], [0])


def test_force_nonempty():
    est = SplitConformalClassifier.from_threshold(0.1, 3, force_nonempty=True)
    np.testing.assert_array_equal(est.predict([[0.5, 0.3, 0.2]]), [[True, False, False]])
    s = predict_set(SplitConformalClassifier.from_threshold(0.1, 3), [0.5, 0.3, 0.2])
    assert s.is_empty


def test_coverage_helpers():
    sets = [PredictionSet.from_labels([0], 2), PredictionSet.from_labels([0, 1], 2), PredictionSet.from_labels([], 2)]
    assert coverage(sets, [0, 1, 1]) == pytest.approx(2 / 3)
    gc = group_coverage(sets, [0, 1, 1], [0, 0, 1], n_groups=3)
    assert gc.coverage[0] == 1.0 and gc.coverage[1] == 0.0
    assert gc.empty_groups == [2]
    stats = set_size_stats(sets)
    assert stats.mean == pytest.approx(1.0)
    assert stats.empty_fraction == pytest.approx(1 / 3)
    with pytest.raises(LengthMismatchError):
        coverage(sets, [0])


def test_replicate_coverage_thread_invariant():
    dgp = TabularDGP([[0.2, 0.1, 0.1], [0.05, 0.3, 0.25]])
    pred = OraclePredictor(dgp)
    a = replicate_coverage(dgp, pred, "lac", 0.1, 50, 50, 40, 9, threads=1)
    b = replicate_coverage(dgp, pred, "lac", 0.1, 50, 50, 40, 9, threads=4)
    np.testing.assert_array_equal(a.coverage, b.coverage)
    np.testing.assert_array_equal(a.threshold, b.threshold)


def test_randomized_aps_coverage_is_near_exact():
    dgp = TabularDGP([[0.2, 0.1, 0.1], [0.05, 0.3, 0.25]])
    res = replicate_coverage(dgp, OraclePredictor(dgp), "aps_randomized", 0.2, 200, 200, 300, 4)
    assert res.mean() >= 0.8 - 3 * res.std_error()
    assert res.mean() <= 0.8 + 1 / 201 + 3 * res.std_error()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_exchangeable_ranks_in_range(seed):
    dgp = TabularDGP([[0.25, 0.25], [0.25, 0.25]])
    r = exchangeable_ranks(dgp, OraclePredictor(dgp), "lac", 9, 200, seed)
    assert r.min() >= 1 and r.max() <= 10
