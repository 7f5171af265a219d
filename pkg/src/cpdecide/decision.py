"""Decision problems, Bayes actions, rational benchmark/baseline and value of information.

Everything is a loss to be minimized. Ties between actions go to the
lowest action index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import CPDecideError, DimensionMismatchError, EmptyTestError, SignalMismatchError
from .probcore import JointTable, RngStream

EVAL_STREAM = 7

# expected losses closer than this count as tied
TIE_TOL = 1e-12


@dataclass(frozen=True)
class DecisionProblem:
    """Loss table ``loss[a, s]`` over actions ``a`` and states ``s``."""

    loss: np.ndarray

    def __init__(self, loss):
        arr = np.array(loss, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise CPDecideError("loss must be a non-empty 2-D table")
        if not np.all(np.isfinite(arr)):
            raise CPDecideError("loss entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "loss", arr)

    @property
    def action_count(self) -> int:
        return self.loss.shape[0]

    @property
    def state_count(self) -> int:
        return self.loss.shape[1]

    @classmethod
    def zero_one(cls, k: int) -> "DecisionProblem":
        return cls(1.0 - np.eye(k))

    def __eq__(self, other):
        return isinstance(other, DecisionProblem) and np.array_equal(self.loss, other.loss)

    def __hash__(self):
        return hash(self.loss.tobytes())


@dataclass(frozen=True)
class Pipeline:
    """Data source, probabilistic predictor and (optionally) a fitted conformal classifier."""

    dgp: object
    predictor: object
    calibrator: object = None


@dataclass(frozen=True)
class LossEstimate:
    mean: float
    std_error: float
    n: int

    @classmethod
    def from_losses(cls, losses) -> "LossEstimate":
        losses = np.asarray(losses, dtype=float)
        n = losses.size
        se = float(losses.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(losses.mean()), se, n)


def _argmin_first(values: np.ndarray) -> int:
    return int(np.flatnonzero(values <= values.min() + TIE_TOL)[0])


def _check_beliefs(problem: DecisionProblem, beliefs) -> np.ndarray:
    b = np.asarray(beliefs, dtype=float)
    if b.shape[-1] != problem.state_count:
        raise DimensionMismatchError(
            f"beliefs over {b.shape[-1]} states, problem has {problem.state_count}"
        )
    return b


def expected_losses(problem: DecisionProblem, beliefs) -> np.ndarray:
    """Expected loss of every action under ``beliefs`` (rows, if a matrix)."""
    return _check_beliefs(problem, beliefs) @ problem.loss.T


def bayes_action(problem: DecisionProblem, beliefs) -> int:
    """Action minimizing expected loss under ``beliefs``."""
    return _argmin_first(expected_losses(problem, beliefs))


def bayes_actions(problem: DecisionProblem, belief_matrix) -> np.ndarray:
    """Row-wise :func:`bayes_action`."""
    E = expected_losses(problem, np.atleast_2d(belief_matrix))
    return np.argmax(E <= E.min(axis=1, keepdims=True) + TIE_TOL, axis=1)


def rational_baseline(problem: DecisionProblem, prior) -> tuple:
    """Best fixed action under the prior and its expected loss."""
    E = expected_losses(problem, prior)
    a = _argmin_first(E)
    return a, float(E[a])


def _table(joint) -> np.ndarray:
    return joint.table if isinstance(joint, JointTable) else np.asarray(joint, dtype=float)


def rational_benchmark(joint, problem: DecisionProblem) -> float:
    """Expected loss of the Bayes agent that best-responds to each signal value.

    Computed as ``sum_v min_a sum_s p(v, s) L[a, s]``, which equals the
    posterior form weighted by ``p(v)`` and skips unreachable signals.
    """
    t = _table(joint)
    if t.shape[1] != problem.state_count:
        raise DimensionMismatchError("joint state dimension does not match the loss table")
    return float(np.sum(np.min(t @ problem.loss.T, axis=1)))


def value_of_information(joint, problem: DecisionProblem) -> float:
    """Baseline loss minus benchmark loss for the signal in ``joint``."""
    t = _table(joint)
    prior = t.sum(axis=0)
    if prior.size != problem.state_count:
        raise DimensionMismatchError("joint state dimension does not match the loss table")
    return rational_baseline(problem, prior / prior.sum())[1] - rational_benchmark(t, problem)


# exact rational arithmetic ---------------------------------------------------


def _fractions(arr) -> list:
    return [[Fraction(v) for v in row] for row in np.asarray(arr, dtype=float).tolist()]


def exact_rational_benchmark(joint, problem: DecisionProblem) -> Fraction:
    """:func:`rational_benchmark` in exact arithmetic on the float inputs."""
    t, L = _fractions(_table(joint)), _fractions(problem.loss)
    if len(t[0]) != problem.state_count:
        raise DimensionMismatchError("joint state dimension does not match the loss table")
    return sum(
        (min(sum((p * l for p, l in zip(row, la)), Fraction(0)) for la in L) for row in t),
        Fraction(0),
    )


def exact_rational_baseline(joint, problem: DecisionProblem) -> Fraction:
    t, L = _fractions(_table(joint)), _fractions(problem.loss)
    prior = [sum(col, Fraction(0)) for col in zip(*t)]
    total = sum(prior, Fraction(0))
    return min(sum((p * l for p, l in zip(prior, la)), Fraction(0)) for la in L) / total


def exact_value_of_information(joint, problem: DecisionProblem) -> Fraction:
    """Value of information computed without rounding."""
    t = _fractions(_table(joint))
    total = sum((sum(r, Fraction(0)) for r in t), Fraction(0))
    return exact_rational_baseline(joint, problem) - exact_rational_benchmark(joint, problem) / total


# Monte Carlo evaluation ------------------------------------------------------


def evaluate_strategy(strategy, pipeline: Pipeline, problem: DecisionProblem, n_test: int,
                      master_seed: int, return_losses: bool = False):
    """Mean loss and standard error of ``strategy`` on ``n_test`` fresh instances.

    Test draws come from ``RngStream(master_seed, EVAL_STREAM)``, so every
    strategy evaluated with the same seed sees the same instances.
    """
    if n_test < 1:
        raise EmptyTestError("n_test must be at least 1")
    if problem.state_count != pipeline.dgp.label_count:
        raise DimensionMismatchError("loss table and DGP disagree on the number of states")
    if strategy.signal == "set" and pipeline.calibrator is None:
        raise SignalMismatchError(f"{strategy.name} needs prediction sets but the pipeline has none")
    strategy.check_pipeline(pipeline)
    rng = RngStream(master_seed, EVAL_STREAM)
    test = pipeline.dgp.draw(n_test, rng.spawn(0))
    M = None
    if pipeline.calibrator is not None:
        P = pipeline.predictor.predict_proba(test.x)
        M = pipeline.calibrator.predict(P, rng.spawn(1))
    actions = strategy.actions(problem, test.x, M)
    losses = problem.loss[actions, test.y]
    est = LossEstimate.from_losses(losses)
    return (est, losses) if return_losses else est
