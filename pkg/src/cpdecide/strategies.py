"""Decision-maker strategies for acting on features, prediction sets, or nothing.

Each strategy maps its signal to beliefs (then to the Bayes action under
those beliefs) or directly to an action. The module-level ``strat_*``
functions are the single-instance rules; the :class:`Strategy` classes
wrap them for batch evaluation.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional

import numpy as np

from .conformal import (
    CAL_STREAM,
    CAL_UNIFORM_STREAM,
    TEST_STREAM,
    TEST_UNIFORM_STREAM,
    PredictionSet,
    ScoreFn,
    SplitConformalClassifier,
    masks_from_indicator,
)
from .decision import (
    DecisionProblem,
    Pipeline,
    _argmin_first,
    bayes_action,
    bayes_actions,
)
from .dgp import PrivateSignalDGP, TabularDGP
from .exceptions import (
    CPDecideError,
    DimensionMismatchError,
    EmptySetError,
    SignalMismatchError,
    ZeroPriorEntryError,
)
from .probcore import Distribution, JointTable, RngStream, entropy


def _as_set(s, k: Optional[int] = None) -> PredictionSet:
    if isinstance(s, PredictionSet):
        return s
    labels = list(s)
    if k is None:
        raise CPDecideError("label count required for a plain label collection")
    return PredictionSet.from_labels(labels, k)


def _require_nonempty(s: PredictionSet):
    if s.is_empty:
        raise EmptySetError("prediction set is empty")


# --------------------------------------------------------------------------
# set joint


@dataclass
class SetJoint:
    """Co-occurrence weights of (prediction set, true label) pairs.

    ``weights[mask]`` holds the raw per-label weight (counts or exact
    probabilities) of sets with bitmask ``mask``; ``smoothing`` is added to
    every label of an observed set before normalizing.
    """

    label_count: int
    weights: Dict[int, np.ndarray] = field(default_factory=dict)
    smoothing: float = 0.0

    def add(self, mask: int, label_weights):
        cur = self.weights.get(mask)
        w = np.asarray(label_weights, dtype=float)
        self.weights[mask] = w.copy() if cur is None else cur + w

    def seen(self, mask: int) -> bool:
        return mask in self.weights

    def conditional(self, mask: int) -> Distribution:
        w = self.weights[mask] + self.smoothing
        return Distribution(w / w.sum())

    def joint_table(self) -> JointTable:
        """Unsmoothed joint over observed sets (rows in ascending bitmask order) and labels."""
        masks = sorted(self.weights)
        t = np.array([self.weights[m] for m in masks])
        return JointTable(t / t.sum())

    def masks(self) -> list:
        return sorted(self.weights)

    def __eq__(self, other):
        if not isinstance(other, SetJoint):
            return NotImplemented
        return (
            self.label_count == other.label_count
            and self.smoothing == other.smoothing
            and self.weights.keys() == other.weights.keys()
            and all(np.array_equal(self.weights[m], other.weights[m]) for m in self.weights)
        )


def learn_set_joint(
    dgp,
    predictor,
    score_fn,
    alpha: float,
    n_cal: int,
    reps: int,
    samples_per_rep: int,
    smoothing: float = 1.0,
    master_seed: int = 0,
    threads: int = 1,
) -> SetJoint:
    """Tally (set, label) pairs from repeated runs of the conformal pipeline."""
    if reps * samples_per_rep < 1:
        raise CPDecideError("need at least one simulated instance")
    fn = ScoreFn.coerce(score_fn)
    k = dgp.label_count
    root = RngStream(master_seed)

    def one(r):
        stream = root.spawn(r)
        cal = dgp.draw(n_cal, stream.spawn(CAL_STREAM))
        est = SplitConformalClassifier(fn.kind, alpha, fn.randomized)
        est.fit(predictor.predict_proba(cal.x), cal.y, stream.spawn(CAL_UNIFORM_STREAM))
        test = dgp.draw(samples_per_rep, stream.spawn(TEST_STREAM))
        M = est.predict(predictor.predict_proba(test.x), stream.spawn(TEST_UNIFORM_STREAM))
        masks = masks_from_indicator(M)
        uniq, inv = np.unique(masks, return_inverse=True)
        counts = np.zeros((len(uniq), k))
        np.add.at(counts, (inv.reshape(-1), test.y), 1.0)
        return uniq, counts

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(reps)))
    else:
        parts = [one(r) for r in range(reps)]
    sj = SetJoint(k, smoothing=float(smoothing))
    for uniq, counts in parts:
        for m, c in zip(uniq.tolist(), counts):
            sj.add(m, c)
    return sj


def exact_set_joint(dgp: TabularDGP, predictor, calibrator: SplitConformalClassifier) -> SetJoint:
    """Set joint of a fixed calibrator on a tabular DGP, by enumerating features."""
    if not isinstance(dgp, (TabularDGP, PrivateSignalDGP)):
        raise CPDecideError("exact enumeration needs a tabular DGP")
    if calibrator.randomized:
        raise CPDecideError("randomized sets cannot be enumerated")
    table = dgp.joint.table if isinstance(dgp, TabularDGP) else dgp.marginal().joint.table
    xs = np.arange(table.shape[0])
    masks = masks_from_indicator(calibrator.predict(predictor.predict_proba(xs)))
    sj = SetJoint(dgp.label_count)
    for x, m in zip(xs, masks.tolist()):
        if table[x].sum() > 0:
            sj.add(m, table[x])
    return sj


# --------------------------------------------------------------------------
# single-instance rules


def strat_oracle_features(dgp, x) -> Distribution:
    """True posterior given the features; any accompanying set is ignored."""
    return dgp.true_posterior(x)


def strat_oracle_sets(sj: SetJoint, pset: PredictionSet, return_flag: bool = False):
    """Bayes posterior given only the set; uniform over the set if it was never seen.

    With ``return_flag`` the result is ``(beliefs, fell_back)``.
    """
    pset = _as_set(pset, sj.label_count)
    if sj.seen(pset.members):
        out, fell_back = sj.conditional(pset.members), False
    else:
        if pset.is_empty:
            out = Distribution.uniform(sj.label_count)
        else:
            out = strat_uniform(pset)
        fell_back = True
    return (out, fell_back) if return_flag else out


def _misspecified_weights(prior: list, alpha, members: list) -> list:
    """Belief vector with in-set mass ``1 - alpha`` and out-of-set mass ``alpha``.

    Arithmetic is generic over the number type, so exact ``Fraction``
    inputs give exact outputs.
    """
    inside = sum((prior[i] for i in members), 0 * alpha)
    outside = sum((p for i, p in enumerate(prior) if i not in members), 0 * alpha)
    return [
        (1 - alpha) * p / inside if i in members else alpha * p / outside
        for i, p in enumerate(prior)
    ]


def strat_misspecified(prior: Distribution, alpha: float, pset) -> Distribution:
    """Reads the set as the possible states: mass ``1 - alpha`` inside, ``alpha`` outside.

    A full set returns the prior unchanged; an empty set is rejected.
    """
    p = np.asarray(prior, dtype=float)
    if np.any(p <= 0):
        raise ZeroPriorEntryError("every label needs positive prior probability")
    pset = _as_set(pset, p.size)
    if pset.label_count != p.size:
        raise DimensionMismatchError("set and prior disagree on the label count")
    _require_nonempty(pset)
    if pset.is_full:
        return Distribution(p)
    members = set(pset.labels)
    return Distribution(_misspecified_weights(p.tolist(), float(alpha), members))


def exact_misspecified(prior, alpha, members) -> list:
    """:func:`strat_misspecified` in exact rational arithmetic."""
    prior = [Fraction(p) for p in prior]
    return _misspecified_weights(prior, Fraction(alpha), set(members))


def expand_associative(pset, distance, b: float) -> PredictionSet:
    """All labels within distance ``b`` of at least one set member."""
    D = np.asarray(distance, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionMismatchError("distance table must be square")
    pset = _as_set(pset, D.shape[0])
    if pset.label_count != D.shape[0]:
        raise DimensionMismatchError("distance table does not match the label count")
    if b < 0:
        raise CPDecideError("radius must be non-negative")
    inside = pset.indicator()
    if not inside.any():
        return pset
    near = (D[inside] <= b).any(axis=0)
    return PredictionSet(
        int(masks_from_indicator(near[None, :])[0]), pset.label_count, pset.alpha, pset.threshold
    )


def strat_associative(prior, alpha, distance, b, pset) -> Distribution:
    return strat_misspecified(prior, alpha, expand_associative(pset, distance, b))


def strat_uniform(pset) -> Distribution:
    """Equal belief on every set member."""
    if not isinstance(pset, PredictionSet):
        raise CPDecideError("strat_uniform needs a PredictionSet")
    _require_nonempty(pset)
    ind = pset.indicator().astype(float)
    return Distribution(ind / ind.sum())


def strat_budgeted(dgp, prior, pset, k: int, x) -> Distribution:
    """Beliefs of an agent who inspects at most ``k`` set members.

    Members are inspected in descending prior order (ties by label index).
    An inspected label's belief is its exact posterior mass relative to the
    set; the uninspected members split the remaining mass in proportion to
    the prior. Labels outside the set get nothing.
    """
    p = np.asarray(prior, dtype=float)
    pset = _as_set(pset, p.size)
    _require_nonempty(pset)
    if k < 0:
        raise CPDecideError("inspection budget must be non-negative")
    members = np.array(pset.labels)
    order = members[np.argsort(-p[members], kind="stable")]
    inspected, rest = order[:k], order[k:]
    post = np.asarray(dgp.true_posterior(x), dtype=float)
    in_mass = post[members].sum()
    beliefs = np.zeros(p.size)
    if in_mass > 0:
        beliefs[inspected] = post[inspected] / in_mass
    residual = max(1.0 - beliefs.sum(), 0.0)
    if rest.size:
        w = p[rest]
        w = w / w.sum() if w.sum() > 0 else np.full(rest.size, 1.0 / rest.size)
        beliefs[rest] = residual * w
    if beliefs.sum() <= 0:
        return strat_uniform(pset)
    return Distribution(beliefs / beliefs.sum())


def strat_maxmin(problem: DecisionProblem, pset) -> int:
    """Action with the smallest worst-case loss over the set's labels."""
    pset = _as_set(pset, problem.state_count)
    _require_nonempty(pset)
    if pset.label_count != problem.state_count:
        raise DimensionMismatchError("set and loss table disagree on the label count")
    worst = problem.loss[:, pset.indicator()].max(axis=1)
    return _argmin_first(worst)


def strat_prior_only(prior) -> Distribution:
    return prior if isinstance(prior, Distribution) else Distribution(prior)


# --------------------------------------------------------------------------
# strategy objects


class Strategy:
    """Base class: a rule from a signal to beliefs and an action.

    ``signal`` is ``"features"``, ``"set"`` or ``"none"``. Set-consuming
    strategies that reject empty sets read an empty set as the full label
    space during batch evaluation (``empty_as_full``).
    """

    name = "strategy"
    signal = "none"
    empty_as_full = False
    needs_features = False

    def beliefs(self, x, pset: Optional[PredictionSet]) -> Optional[Distribution]:
        raise NotImplementedError

    def act(self, problem: DecisionProblem, x, pset: Optional[PredictionSet]) -> int:
        return bayes_action(problem, self.beliefs(x, pset))

    def check_pipeline(self, pipeline: Pipeline):
        pass

    def _set_for(self, mask: int, k: int) -> PredictionSet:
        if mask == 0 and self.empty_as_full:
            mask = (1 << k) - 1
        return PredictionSet(mask, k)

    def actions(self, problem: DecisionProblem, X, M) -> np.ndarray:
        """Actions for a batch of features ``X`` and set membership matrix ``M``."""
        k = problem.state_count
        n = len(X)
        masks = masks_from_indicator(M).tolist() if M is not None else [None] * n
        out = np.empty(n, dtype=np.int64)
        cache = {}
        for i in range(n):
            key = masks[i] if not self.needs_features else (_feature_key(X[i]), masks[i])
            if key not in cache:
                pset = None if masks[i] is None else self._set_for(masks[i], k)
                cache[key] = self.act(problem, _feature_value(X[i]), pset)
            out[i] = cache[key]
        return out

    def mean_entropy(self, X, M, k: int) -> float:
        """Average entropy of the beliefs formed over a batch (NaN for action-only rules)."""
        masks = masks_from_indicator(M).tolist() if M is not None else [None] * len(X)
        cache = {}
        total = 0.0
        for i in range(len(X)):
            key = masks[i] if not self.needs_features else (_feature_key(X[i]), masks[i])
            if key not in cache:
                pset = None if masks[i] is None else self._set_for(masks[i], k)
                b = self.beliefs(_feature_value(X[i]), pset)
                cache[key] = float("nan") if b is None else entropy(b)
            total += cache[key]
        return total / len(X)


def _feature_key(x):
    return x.tobytes() if isinstance(x, np.ndarray) else int(x)


def _feature_value(x):
    if isinstance(x, np.ndarray) and x.ndim == 0:
        return int(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _require_oracle(pipeline: Pipeline, name: str):
    if not hasattr(pipeline.dgp, "true_posterior"):
        raise SignalMismatchError(f"{name} needs a DGP with an exact posterior")


class OracleFeatures(Strategy):
    name = "oracle_features"
    signal = "features"
    needs_features = True

    def __init__(self, dgp):
        self.dgp = dgp

    def beliefs(self, x, pset=None):
        return strat_oracle_features(self.dgp, x)

    def check_pipeline(self, pipeline):
        _require_oracle(pipeline, self.name)

    def actions(self, problem, X, M):
        return bayes_actions(problem, self.dgp.posterior_matrix(X))


class OracleSets(Strategy):
    name = "oracle_sets"
    signal = "set"

    def __init__(self, set_joint: SetJoint):
        self.set_joint = set_joint

    def beliefs(self, x, pset):
        return strat_oracle_sets(self.set_joint, pset)


class Misspecified(Strategy):
    name = "misspecified"
    signal = "set"
    empty_as_full = True

    def __init__(self, prior, alpha: float):
        self.prior = strat_prior_only(prior)
        self.alpha = float(alpha)

    def beliefs(self, x, pset):
        return strat_misspecified(self.prior, self.alpha, pset)


class Associative(Strategy):
    name = "associative"
    signal = "set"
    empty_as_full = True

    def __init__(self, prior, alpha: float, distance, radius: float):
        self.prior = strat_prior_only(prior)
        self.alpha = float(alpha)
        self.distance = np.asarray(distance, dtype=float)
        self.radius = float(radius)

    def beliefs(self, x, pset):
        return strat_associative(self.prior, self.alpha, self.distance, self.radius, pset)


class UniformOverSet(Strategy):
    name = "uniform"
    signal = "set"
    empty_as_full = True

    def beliefs(self, x, pset):
        return strat_uniform(pset)


class Budgeted(Strategy):
    name = "budgeted"
    signal = "set"
    empty_as_full = True
    needs_features = True

    def __init__(self, dgp, prior, budget: int):
        self.dgp = dgp
        self.prior = strat_prior_only(prior)
        self.budget = int(budget)

    def beliefs(self, x, pset):
        return strat_budgeted(self.dgp, self.prior, pset, self.budget, x)

    def check_pipeline(self, pipeline):
        _require_oracle(pipeline, self.name)


class MaxMin(Strategy):
    name = "maxmin"
    signal = "set"
    empty_as_full = True

    def __init__(self, problem: Optional[DecisionProblem] = None):
        self.problem = problem

    def beliefs(self, x, pset):
        return None

    def act(self, problem, x, pset):
        return strat_maxmin(self.problem if self.problem is not None else problem, pset)


class PriorOnly(Strategy):
    name = "prior_only"
    signal = "none"

    def __init__(self, prior):
        self.prior = strat_prior_only(prior)

    def beliefs(self, x, pset=None):
        return self.prior

    def actions(self, problem, X, M):
        return np.full(len(X), bayes_action(problem, self.prior), dtype=np.int64)


# --------------------------------------------------------------------------
# exact evaluation on tabular pipelines


def exact_strategy_loss(strategy: Strategy, pipeline: Pipeline, problem: DecisionProblem) -> float:
    """Expected loss of ``strategy`` by enumerating every feature value of a tabular DGP.

    Needs a deterministic set map, i.e. a non-randomized calibrator.
    """
    dgp = pipeline.dgp
    if not isinstance(dgp, (TabularDGP, PrivateSignalDGP)):
        raise CPDecideError("exact evaluation needs a tabular DGP")
    table = dgp.joint.table if isinstance(dgp, TabularDGP) else dgp.marginal().joint.table
    xs = np.arange(table.shape[0])
    M = None
    if pipeline.calibrator is not None:
        if pipeline.calibrator.randomized:
            raise CPDecideError("randomized sets cannot be enumerated")
        M = pipeline.calibrator.predict(pipeline.predictor.predict_proba(xs))
    elif strategy.signal == "set":
        raise SignalMismatchError(f"{strategy.name} needs prediction sets but the pipeline has none")
    reachable = table.sum(axis=1) > 0
    xs_r = xs[reachable]
    actions = strategy.actions(problem, xs_r, None if M is None else M[reachable])
    return float(np.sum(table[xs_r] * problem.loss[actions]))
