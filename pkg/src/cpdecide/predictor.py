"""Softmax predictors, temperature scaling and calibration diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from ._validation import (
    check_consistent_length,
    check_is_fitted,
    check_labels,
    check_prob_matrix,
)
from .dgp import PrivateSignalDGP, Samples, TabularDGP
from .exceptions import (
    CPDecideError,
    DegenerateLabelsError,
    DomainMismatchError,
    EmptyEvalError,
    EmptyRecordsError,
    EmptyTrainError,
    NonPositiveTauError,
)
from .probcore import Distribution, RngStream

TAU_BOUNDS = (0.05, 20.0)


# --------------------------------------------------------------------------
# tempering


def temper_matrix(P, tau: float) -> np.ndarray:
    """Raise each row to the power ``1/tau`` and renormalize. Zeros stay zero."""
    if not tau > 0:
        raise NonPositiveTauError(f"temperature must be positive, got {tau}")
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.log(P)
    # log-space keeps tiny masses from underflowing at small tau
    return softmax(logp / tau, axis=-1)


def temper(dist: Distribution, tau: float) -> Distribution:
    return Distribution(temper_matrix(dist.probs, tau))


# --------------------------------------------------------------------------
# predictors


class _ProbabilisticPredictor:
    """Shared ``predict`` for anything exposing ``predict_proba``."""

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class OraclePredictor(_ProbabilisticPredictor):
    """Returns the exact posterior of a data-generating process."""

    def __init__(self, dgp):
        self.dgp = dgp

    def __repr__(self):
        return f"OraclePredictor({self.dgp!r})"

    @property
    def label_count(self) -> int:
        return self.dgp.label_count

    def predict_proba(self, X) -> np.ndarray:
        return self.dgp.posterior_matrix(X)


class TemperedPredictor(_ProbabilisticPredictor):
    """A base predictor with its outputs tempered by ``tau``."""

    def __init__(self, base, tau: float):
        if not tau > 0:
            raise NonPositiveTauError(f"temperature must be positive, got {tau}")
        self.base = base
        self.tau = float(tau)

    def __repr__(self):
        return f"TemperedPredictor({self.base!r}, tau={self.tau})"

    @property
    def label_count(self) -> int:
        return self.base.label_count

    def predict_proba(self, X) -> np.ndarray:
        return temper_matrix(self.base.predict_proba(X), self.tau)


class LogisticPredictor(_ProbabilisticPredictor, ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fitted by full-batch gradient descent.

    Weights start at zero, so ``steps=0`` predicts the uniform distribution.

    Parameters
    ----------
    steps : int, default=500
        Number of gradient steps.
    step_size : float, default=0.1
        Learning rate.
    n_classes : int, optional
        Label count; inferred as ``max(y) + 1`` when omitted.
    """

    def __init__(self, steps=500, step_size=0.1, n_classes=None):
        self.steps = steps
        self.step_size = step_size
        self.n_classes = n_classes

    @property
    def label_count(self) -> int:
        check_is_fitted(self, "coef_")
        return self.coef_.shape[1]

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = check_labels(y, self.n_classes)
        if len(y) == 0:
            raise EmptyTrainError("training set is empty")
        check_consistent_length(X, y)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        params = np.zeros((X.shape[1] + 1, k))
        self.loss_curve_ = []
        for _ in range(self.steps):
            loss, grad = _logistic_loss_grad(params, X, y)
            self.loss_curve_.append(loss)
            params = params - self.step_size * grad
        self.loss_curve_.append(_logistic_loss_grad(params, X, y)[0])
        self.coef_ = params[:-1]
        self.intercept_ = params[-1]
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.n_features_in_ == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DomainMismatchError(f"expected {self.n_features_in_} features")
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)


def _logistic_loss_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient; ``params`` stacks weights over the bias row."""
    W, b = params[:-1], params[-1]
    logp = log_softmax(X @ W + b, axis=1)
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    resid = np.exp(logp)
    resid[np.arange(n), y] -= 1.0
    resid /= n
    grad = np.vstack([X.T @ resid, resid.sum(axis=0)])
    return float(loss), grad


def fit_logistic(train: Samples, steps: int, step_size: float, rng: RngStream | None = None):
    """Fit a :class:`LogisticPredictor` on real-vector features.

    Initialization is deterministic (zeros), so ``rng`` is accepted for a
    uniform call signature but no draws are taken from it.
    """
    if len(train) == 0:
        raise EmptyTrainError("training set is empty")
    X = np.asarray(train.x, dtype=float)
    if X.ndim != 2:
        raise DomainMismatchError("logistic fitting needs real-vector features")
    k = int(train.y.max()) + 1
    return LogisticPredictor(steps=steps, step_size=step_size, n_classes=k).fit(X, train.y)


def predict(p, x) -> Distribution:
    """Predicted distribution for a single instance ``x``."""
    if isinstance(_root_dgp(p), (TabularDGP, PrivateSignalDGP)):
        if not isinstance(x, (int, np.integer)):
            raise DomainMismatchError("tabular predictors take a scalar feature index")
        batch = np.array([x])
    else:
        batch = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    return Distribution(p.predict_proba(batch)[0])


def _root_dgp(p):
    while isinstance(p, TemperedPredictor):
        p = p.base
    return getattr(p, "dgp", None)


# --------------------------------------------------------------------------
# temperature fitting


def golden_section_minimize(f, lo: float, hi: float, tol: float = 1e-4) -> float:
    """Minimize a unimodal ``f`` on ``[lo, hi]`` until the bracket is narrower than ``tol``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def tempered_nll(P, y, tau: float) -> float:
    Q = temper_matrix(P, tau)
    picked = Q[np.arange(len(y)), y]
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(picked)))


class TemperatureScaler(TransformerMixin, BaseEstimator):
    """Post-hoc temperature scaling of probability vectors.

    ``fit`` finds the temperature in ``bounds`` that minimizes the mean
    negative log-likelihood of the tempered probabilities by golden-section
    search; ``transform`` applies it.
    """

    def __init__(self, bounds=TAU_BOUNDS, tol=1e-4):
        self.bounds = bounds
        self.tol = tol

    def fit(self, P, y):
        P = check_prob_matrix(P)
        y = check_labels(y, P.shape[1])
        check_consistent_length(P, y)
        if len(y) == 0:
            raise EmptyEvalError("calibration set is empty")
        if np.unique(y).size < 2:
            raise DegenerateLabelsError("temperature fitting needs at least two distinct labels")
        lo, hi = self.bounds
        self.tau_ = golden_section_minimize(lambda t: tempered_nll(P, y, t), lo, hi, self.tol)
        return self

    def transform(self, P):
        check_is_fitted(self, "tau_")
        return temper_matrix(check_prob_matrix(P), self.tau_)


def fit_temperature(p, cal: Samples) -> float:
    """Temperature that best recalibrates predictor ``p`` on ``cal``."""
    if len(cal) == 0:
        raise EmptyEvalError("calibration set is empty")
    return TemperatureScaler().fit(p.predict_proba(cal.x), cal.y).tau_


# --------------------------------------------------------------------------
# calibration diagnostics


@dataclass(frozen=True)
class ReliabilityTable:
    """Equal-width top-label confidence bins; empty bins carry NaN means."""

    lower: np.ndarray
    upper: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def __len__(self):
        return len(self.count)

    def ece(self) -> float:
        n = self.count.sum()
        occupied = self.count > 0
        gaps = np.abs(self.accuracy[occupied] - self.mean_confidence[occupied])
        return float(np.sum(self.count[occupied] / n * gaps))

    def rows(self):
        return list(
            zip(
                self.lower.tolist(),
                self.upper.tolist(),
                self.mean_confidence.tolist(),
                self.accuracy.tolist(),
                self.count.tolist(),
            )
        )


def reliability_from_probs(P, y, bin_count: int = 10) -> ReliabilityTable:
    P = check_prob_matrix(P)
    y = check_labels(y, P.shape[1])
    check_consistent_length(P, y)
    if len(y) == 0:
        raise EmptyEvalError("evaluation set is empty")
    if bin_count < 1:
        raise CPDecideError("bin_count must be at least 1")
    conf = P.max(axis=1)
    correct = (P.argmax(axis=1) == y).astype(float)
    idx = np.minimum((conf * bin_count).astype(np.int64), bin_count - 1)
    count = np.bincount(idx, minlength=bin_count)
    with np.errstate(invalid="ignore"):
        mean_conf = np.bincount(idx, weights=conf, minlength=bin_count) / count
        acc = np.bincount(idx, weights=correct, minlength=bin_count) / count
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    return ReliabilityTable(edges[:-1], edges[1:], mean_conf, acc, count)


def ece_from_probs(P, y, bin_count: int = 10) -> float:
    return reliability_from_probs(P, y, bin_count).ece()


def reliability(p, eval: Samples, bin_count: int = 10) -> ReliabilityTable:
    if len(eval) == 0:
        raise EmptyEvalError("evaluation set is empty")
    return reliability_from_probs(p.predict_proba(eval.x), eval.y, bin_count)


def ece(p, eval: Samples, bin_count: int = 10) -> float:
    """Top-label expected calibration error of ``p`` on ``eval``."""
    return reliability(p, eval, bin_count).ece()


def multical_residual(records, grid: float, return_cells: bool = False):
    """Largest conditional-correctness gap of a candidate probability.

    ``records`` are ``(u, v, w, y)`` rows: two reference probabilities,
    the candidate probability ``w`` and a binary outcome. Each of
    ``u, v, w`` is cut into bins of width ``grid``; over the occupied cells
    the result is ``max |mean(y) - mean(w)|``.
    """
    R = np.asarray(records, dtype=float)
    if R.size == 0:
        raise EmptyRecordsError("no records")
    if R.ndim != 2 or R.shape[1] != 4:
        raise CPDecideError("records must be rows of (u, v, w, y)")
    if np.any(R[:, :3] < 0) or np.any(R[:, :3] > 1):
        raise CPDecideError("probabilities must lie in [0, 1]")
    if not 0 < grid <= 1:
        raise CPDecideError("grid width must lie in (0, 1]")
    nbins = int(math.ceil(1.0 / grid - 1e-12))
    cells = np.minimum(np.floor(R[:, :3] / grid).astype(np.int64), nbins - 1)
    keys, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    mean_y = np.bincount(inverse, weights=R[:, 3]) / counts
    mean_w = np.bincount(inverse, weights=R[:, 2]) / counts
    gaps = np.abs(mean_y - mean_w)
    worst = float(gaps.max())
    if return_cells:
        return worst, keys, counts, mean_y, mean_w
    return worst
