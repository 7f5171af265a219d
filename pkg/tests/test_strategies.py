from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdecide.conformal import PredictionSet, SplitConformalClassifier
from cpdecide.decision import DecisionProblem, Pipeline, evaluate_strategy, rational_benchmark
from cpdecide.dgp import TabularDGP
from cpdecide.exceptions import EmptySetError, ZeroPriorEntryError
from cpdecide.predictor import OraclePredictor
from cpdecide.probcore import Distribution
from cpdecide.strategies import (
    Budgeted,
    MaxMin,
    Misspecified,
    OracleFeatures,
    OracleSets,
    PriorOnly,
    SetJoint,
    UniformOverSet,
    exact_misspecified,
    exact_set_joint,
    exact_strategy_loss,
    expand_associative,
    learn_set_joint,
    strat_budgeted,
    strat_maxmin,
    strat_misspecified,
    strat_oracle_sets,
    strat_uniform,
)

TABLE = np.array([[0.2, 0.1, 0.1], [0.05, 0.3, 0.25]])


def S(labels, k=3):
    return PredictionSet.from_labels(labels, k)


def test_misspecified_worked_example():
    out = strat_misspecified(Distribution([1 / 2, 1 / 3, 1 / 6]), 0.05, S([1, 2]))
    np.testing.assert_allclose(out.probs, [0.05, 0.63333333333, 0.31666666667], atol=1e-9)
    exact = exact_misspecified([Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)], Fraction(1, 20), [1, 2])
    assert exact == [Fraction(1, 20), Fraction(19, 30), Fraction(19, 60)]
    assert exact[1] + exact[2] == Fraction(19, 20)


def test_misspecified_edge_cases():
    prior = Distribution([0.5, 0.3, 0.2])
    np.testing.assert_array_equal(strat_misspecified(prior, 0.1, S([0, 1, 2])).probs, prior.probs)
    with pytest.raises(EmptySetError):
        strat_misspecified(prior, 0.1, S([]))
    with pytest.raises(ZeroPriorEntryError):
        strat_misspecified(Distribution([0.5, 0.5, 0.0]), 0.1, S([0]))


@given(st.lists(st.integers(1, 20), min_size=2, max_size=6), st.data())
def test_misspecified_in_set_mass(w, data):
    k = len(w)
    members = data.draw(st.sets(st.integers(0, k - 1), min_size=1, max_size=k - 1))
    alpha = data.draw(st.sampled_from([0.05, 0.1, 0.2]))
    out = strat_misspecified(Distribution(np.array(w) / sum(w)), alpha, S(sorted(members), k))
    assert out.probs[sorted(members)].sum() == pytest.approx(1 - alpha, abs=1e-12)


def test_uniform_over_set():
    np.testing.assert_allclose(strat_uniform(S([0, 2])).probs, [0.5, 0, 0.5])
    with pytest.raises(EmptySetError):
        strat_uniform(S([]))


def test_maxmin_examples():
    prob = DecisionProblem([[0, 10], [4, 4], [10, 0]])
    assert strat_maxmin(prob, S([0, 1], 2)) == 1
    assert strat_maxmin(prob, S([0], 2)) == 0
    with pytest.raises(EmptySetError):
        strat_maxmin(prob, S([], 2))


@settings(max_examples=200)
@given(st.data())
def test_maxmin_matches_exhaustive(data):
    a, k = data.draw(st.integers(1, 6)), data.draw(st.integers(1, 6))
    L = np.array(data.draw(st.lists(st.integers(0, 5), min_size=a * k, max_size=a * k)), float).reshape(a, k)
    members = sorted(data.draw(st.sets(st.integers(0, k - 1), min_size=1)))
    worst = [max(L[i, s] for s in members) for i in range(a)]
    assert strat_maxmin(DecisionProblem(L), S(members, k)) == worst.index(min(worst))


def test_associative_expansion():
    D = np.abs(np.subtract.outer(np.arange(4), np.arange(4)))
    assert expand_associative(S([1], 4), D, 1).labels == (0, 1, 2)
    assert expand_associative(S([1], 4), D, 0).labels == (1,)
    assert expand_associative(S([0, 3], 4), D, 1).labels == (0, 1, 2, 3)


def test_budgeted_interpolates():
    dgp = TabularDGP(TABLE)
    prior = dgp.prior
    full = S([0, 1, 2])
    # k >= |set| is the oracle posterior renormalized to the set
    np.testing.assert_allclose(strat_budgeted(dgp, prior, full, 3, 1).probs, dgp.true_posterior(1).probs)
    # k = 0 splits mass by the prior
    np.testing.assert_allclose(strat_budgeted(dgp, prior, S([1, 2]), 0, 1).probs,
                               [0, 0.4 / 0.75, 0.35 / 0.75])
    # k = 1 inspects the larger-prior member (label 1)
    post = dgp.true_posterior(1).probs
    in_mass = post[1] + post[2]
    expected = [0, post[1] / in_mass, 1 - post[1] / in_mass]
    np.testing.assert_allclose(strat_budgeted(dgp, prior, S([1, 2]), 1, 1).probs, expected)


def test_oracle_sets_fallback():
    sj = SetJoint(3)
    sj.add(S([0, 1]).members, [3.0, 1.0, 0.0])
    b, fell = strat_oracle_sets(sj, S([0, 1]), return_flag=True)
    np.testing.assert_allclose(b.probs, [0.75, 0.25, 0])
    assert not fell
    b, fell = strat_oracle_sets(sj, S([2]), return_flag=True)
    np.testing.assert_allclose(b.probs, [0, 0, 1])
    assert fell
    b = strat_oracle_sets(sj, S([]))
    np.testing.assert_allclose(b.probs, [1 / 3] * 3)


def test_set_joint_smoothing():
    sj = SetJoint(2, smoothing=1.0)
    sj.add(0b01, [1.0, 0.0])
    np.testing.assert_allclose(sj.conditional(0b01).probs, [2 / 3, 1 / 3])


def _pipe(threshold=0.7):
    dgp = TabularDGP(TABLE)
    pred = OraclePredictor(dgp)
    return Pipeline(dgp, pred, SplitConformalClassifier.from_threshold(threshold, 3))


def test_exact_set_joint_by_hand():
    pipe = _pipe()
    sj = exact_set_joint(pipe.dgp, pipe.predictor, pipe.calibrator)
    # posterior x=0: (.5,.25,.25) -> LAC scores (.5,.75,.75); x=1: (.0833,.5,.4167) -> (.9167,.5,.5833)
    assert sj.masks() == [0b001, 0b110]
    np.testing.assert_allclose(sj.weights[0b001], TABLE[0])
    np.testing.assert_allclose(sj.weights[0b110], TABLE[1])


def test_exact_oracle_sets_equals_benchmark_on_set_joint():
    pipe = _pipe()
    prob = DecisionProblem([[0, 1, 3], [1, 0, 3], [2, 2, 0]])
    sj = exact_set_joint(pipe.dgp, pipe.predictor, pipe.calibrator)
    assert exact_strategy_loss(OracleSets(sj), pipe, prob) == pytest.approx(rational_benchmark(sj.joint_table(), prob))
    assert exact_strategy_loss(OracleFeatures(pipe.dgp), pipe, prob) == pytest.approx(
        rational_benchmark(pipe.dgp.joint, prob))


def test_exact_loss_matches_monte_carlo():
    pipe = _pipe()
    prob = DecisionProblem([[0, 1, 3], [1, 0, 3], [2, 2, 0]])
    prior = pipe.dgp.prior
    for strat in [UniformOverSet(), Misspecified(prior, 0.1), MaxMin(), PriorOnly(prior), Budgeted(pipe.dgp, prior, 1)]:
        exact = exact_strategy_loss(strat, pipe, prob)
        est = evaluate_strategy(strat, pipe, prob, 20000, 3)
        assert abs(est.mean - exact) <= 4 * est.std_error + 1e-12, strat.name


def test_learned_set_joint_thread_invariant_and_converges():
    dgp = TabularDGP(TABLE)
    pred = OraclePredictor(dgp)
    a = learn_set_joint(dgp, pred, "lac", 0.2, 200, 20, 200, smoothing=0.0, master_seed=2, threads=1)
    b = learn_set_joint(dgp, pred, "lac", 0.2, 200, 20, 200, smoothing=0.0, master_seed=2, threads=3)
    assert a == b
    assert sum(w.sum() for w in a.weights.values()) == 4000


def test_oracle_features_beats_sets_on_random_tables():
    rng = np.random.default_rng(0)
    for _ in range(30):
        t = rng.dirichlet(np.ones(12)).reshape(4, 3)
        if np.any(t.sum(axis=0) <= 0):
            continue
        pipe = Pipeline(TabularDGP(t), OraclePredictor(TabularDGP(t)), SplitConformalClassifier.from_threshold(0.6, 3))
        prob = DecisionProblem(rng.integers(0, 5, size=(3, 3)))
        sj = exact_set_joint(pipe.dgp, pipe.predictor, pipe.calibrator)
        lf = exact_strategy_loss(OracleFeatures(pipe.dgp), pipe, prob)
        ls = exact_strategy_loss(OracleSets(sj), pipe, prob)
        assert lf <= ls + 1e-12
        for strat in [UniformOverSet(), MaxMin(), PriorOnly(pipe.dgp.prior)]:
            assert ls <= exact_strategy_loss(strat, pipe, prob) + 1e-12


def test_empty_sets_handled_in_batch():
    pipe = _pipe(threshold=0.0)  # every set empty
    prob = DecisionProblem.zero_one(3)
    prior = pipe.dgp.prior
    # empty read as full: misspecified falls back to the prior
    assert exact_strategy_loss(Misspecified(prior, 0.1), pipe, prob) == pytest.approx(
        exact_strategy_loss(PriorOnly(prior), pipe, prob))
    M = pipe.calibrator.predict(pipe.predictor.predict_proba(np.arange(2)))
    assert not M.any()
