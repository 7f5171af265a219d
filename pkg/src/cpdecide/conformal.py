"""Split conformal prediction for classification.

Scores follow the "larger is stranger" convention. A calibrated threshold
admits every label whose score is at most the threshold, ties included.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    check_alpha,
    check_consistent_length,
    check_is_fitted,
    check_labels,
    check_prob_matrix,
)
from .exceptions import (
    CPDecideError,
    EmptyInputError,
    EmptyScoresError,
    LabelOutOfRangeError,
    LengthMismatchError,
    MissingUniformError,
)
from .probcore import Distribution, RngStream

# child stream ids inside one replication
CAL_STREAM, TEST_STREAM, CAL_UNIFORM_STREAM, TEST_UNIFORM_STREAM = 0, 1, 2, 3
MAX_LABELS = 62


@dataclass(frozen=True)
class ScoreFn:
    """Nonconformity score: ``"lac"`` (one minus mass) or ``"aps"`` (cumulative mass)."""

    kind: str = "lac"
    randomized: bool = False

    def __post_init__(self):
        if self.kind not in ("lac", "aps"):
            raise CPDecideError(f"unknown score kind {self.kind!r}")
        if self.randomized and self.kind != "aps":
            raise CPDecideError("only the APS score has a randomized variant")

    @classmethod
    def coerce(cls, value) -> "ScoreFn":
        if isinstance(value, ScoreFn):
            return value
        if value in ("lac", "aps"):
            return cls(value)
        if value == "aps_randomized":
            return cls("aps", randomized=True)
        raise CPDecideError(f"unknown score function {value!r}")


LAC = ScoreFn("lac")
APS = ScoreFn("aps")


def score_matrix(fn: ScoreFn, P, u=None) -> np.ndarray:
    """Scores of every label for every row of ``P``.

    For APS the labels are ranked by descending mass with ties broken by
    ascending label index; a label's score is the cumulative mass through
    its own position, minus ``u * p_label`` in the randomized variant.
    """
    P = np.asarray(P, dtype=float)
    if fn.kind == "lac":
        return 1.0 - P
    order = np.argsort(-P, axis=1, kind="stable")
    cum = np.cumsum(np.take_along_axis(P, order, axis=1), axis=1)
    S = np.empty_like(P)
    np.put_along_axis(S, order, cum, axis=1)
    if fn.randomized:
        if u is None:
            raise MissingUniformError("randomized APS needs one uniform draw per row")
        S = S - np.asarray(u, dtype=float).reshape(-1, 1) * P
    return S


def score(fn: ScoreFn, softmax: Distribution, label: int, u: Optional[float] = None) -> float:
    """Nonconformity score of ``label`` under the predicted distribution ``softmax``."""
    probs = np.asarray(softmax, dtype=float)
    if not 0 <= label < probs.size:
        raise LabelOutOfRangeError(f"label {label} out of range for {probs.size} classes")
    if fn.randomized and u is None:
        raise MissingUniformError("randomized APS needs a uniform draw")
    uu = None if u is None else np.array([u])
    return float(score_matrix(fn, probs[None, :], uu)[0, label])


def calibrate(scores: Sequence[float], alpha: float) -> float:
    """Finite-sample corrected conformal threshold.

    Returns the ``ceil((1 - alpha)(n + 1))``-th smallest score, or ``+inf``
    when that rank exceeds ``n`` (i.e. ``alpha < 1/(n + 1)``).
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise EmptyScoresError("no calibration scores")
    alpha = check_alpha(alpha)
    n = s.size
    # rounding guards products like 0.9 * 10 = 9.000000000000002
    k = math.ceil(round((1.0 - alpha) * (n + 1), 9))
    if k > n:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


@dataclass(frozen=True)
class PredictionSet:
    """A label subset stored as a bitmask (bit ``i`` set means label ``i`` is in)."""

    members: int
    label_count: int
    alpha: float = float("nan")
    threshold: float = float("nan")

    @classmethod
    def from_labels(cls, labels, label_count, alpha=float("nan"), threshold=float("nan")):
        mask = 0
        for y in labels:
            if not 0 <= y < label_count:
                raise LabelOutOfRangeError(f"label {y} out of range")
            mask |= 1 << int(y)
        return cls(mask, label_count, alpha, threshold)

    @classmethod
    def full(cls, label_count, **kw):
        return cls((1 << label_count) - 1, label_count, **kw)

    @property
    def labels(self) -> tuple:
        return tuple(i for i in range(self.label_count) if self.members >> i & 1)

    @property
    def is_empty(self) -> bool:
        return self.members == 0

    @property
    def is_full(self) -> bool:
        return self.members == (1 << self.label_count) - 1

    def indicator(self) -> np.ndarray:
        return (self.members >> np.arange(self.label_count)) & 1 == 1

    def __contains__(self, label) -> bool:
        return 0 <= label < self.label_count and bool(self.members >> int(label) & 1)

    def __len__(self) -> int:
        return bin(self.members).count("1")

    def __iter__(self):
        return iter(self.labels)

    def __repr__(self):
        return f"PredictionSet({set(self.labels) or '{}'}, K={self.label_count})"


def masks_from_indicator(M: np.ndarray) -> np.ndarray:
    """Row bitmasks of a boolean membership matrix."""
    M = np.asarray(M, dtype=bool)
    if M.shape[1] > MAX_LABELS:
        raise CPDecideError(f"bitmask sets support at most {MAX_LABELS} labels")
    return M.astype(np.int64) @ (np.int64(1) << np.arange(M.shape[1], dtype=np.int64))


class SplitConformalClassifier(BaseEstimator):
    """Split conformal classifier over predicted probability vectors.

    Parameters
    ----------
    score : {"lac", "aps"}, default="lac"
        Nonconformity score.
    alpha : float, default=0.1
        Target miscoverage rate.
    randomized : bool, default=False
        Use the randomized APS score (needs an ``rng`` at fit and predict).
    force_nonempty : bool, default=False
        Add the top label to sets that would otherwise be empty.

    Attributes
    ----------
    threshold_ : float
        Calibrated score threshold, possibly ``inf``.
    n_cal_ : int
        Number of calibration points.
    """

    def __init__(self, score="lac", alpha=0.1, randomized=False, force_nonempty=False):
        self.score = score
        self.alpha = alpha
        self.randomized = randomized
        self.force_nonempty = force_nonempty

    @property
    def score_fn(self) -> ScoreFn:
        return ScoreFn(self.score, self.randomized)

    def _uniforms(self, n, rng):
        if not self.randomized:
            return None
        if rng is None:
            raise MissingUniformError("randomized APS needs an rng")
        return rng.random(n)

    def fit(self, P, y, rng: Optional[RngStream] = None):
        P = check_prob_matrix(P)
        y = check_labels(y, P.shape[1])
        check_consistent_length(P, y)
        if len(y) == 0:
            raise EmptyScoresError("calibration set is empty")
        S = score_matrix(self.score_fn, P, self._uniforms(len(y), rng))
        self.cal_scores_ = S[np.arange(len(y)), y]
        self.threshold_ = calibrate(self.cal_scores_, self.alpha)
        self.n_cal_ = len(y)
        self.n_classes_ = P.shape[1]
        return self

    @classmethod
    def from_threshold(cls, threshold, n_classes, **params):
        """A classifier with a given threshold, skipping calibration."""
        est = cls(**params)
        est.threshold_ = float(threshold)
        est.n_cal_ = 0
        est.n_classes_ = n_classes
        return est

    def predict(self, P, rng: Optional[RngStream] = None) -> np.ndarray:
        """Boolean membership matrix of shape ``(n, K)``."""
        check_is_fitted(self, "threshold_")
        P = check_prob_matrix(P)
        if np.isinf(self.threshold_):
            return np.ones(P.shape, dtype=bool)
        S = score_matrix(self.score_fn, P, self._uniforms(P.shape[0], rng))
        M = S <= self.threshold_
        if self.force_nonempty:
            empty = ~M.any(axis=1)
            M[empty, P[empty].argmax(axis=1)] = True
        return M

    def predict_sets(self, P, rng: Optional[RngStream] = None) -> list:
        M = self.predict(P, rng)
        return [
            PredictionSet(int(m), M.shape[1], float(self.alpha), self.threshold_)
            for m in masks_from_indicator(M)
        ]


ConformalCalibrator = SplitConformalClassifier


def predict_set(cal: SplitConformalClassifier, softmax, rng: Optional[RngStream] = None) -> PredictionSet:
    """Conformal set for one predicted distribution."""
    return cal.predict_sets(np.asarray(softmax, dtype=float)[None, :], rng)[0]


# --------------------------------------------------------------------------
# coverage auditing


def _hits(sets, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if len(sets) != len(labels):
        raise LengthMismatchError("sets and labels differ in length")
    if isinstance(sets, np.ndarray) and sets.ndim == 2:
        return sets[np.arange(len(labels)), labels.astype(np.int64)]
    return np.array([int(y) in s for s, y in zip(sets, labels)], dtype=bool)


def coverage(sets, labels) -> float:
    """Fraction of instances whose label lies in its set."""
    if len(sets) == 0:
        raise EmptyInputError("no sets")
    return float(_hits(sets, labels).mean())


@dataclass(frozen=True)
class GroupCoverage:
    coverage: np.ndarray
    counts: np.ndarray

    @property
    def empty_groups(self) -> list:
        return [int(g) for g in np.flatnonzero(self.counts == 0)]


def group_coverage(sets, labels, groups, n_groups: Optional[int] = None) -> GroupCoverage:
    """Coverage within each group; groups without members get NaN."""
    hits = _hits(sets, labels)
    groups = np.asarray(groups, dtype=np.int64)
    if len(groups) != len(hits):
        raise LengthMismatchError("groups and labels differ in length")
    if groups.size and groups.min() < 0:
        raise CPDecideError("group indices must be non-negative")
    g = n_groups if n_groups is not None else (int(groups.max()) + 1 if groups.size else 0)
    counts = np.bincount(groups, minlength=g)
    with np.errstate(invalid="ignore"):
        cov = np.bincount(groups, weights=hits.astype(float), minlength=g) / counts
    return GroupCoverage(cov, counts)


@dataclass(frozen=True)
class SetSizeStats:
    mean: float
    histogram: np.ndarray
    empty_fraction: float


def set_size_stats(sets) -> SetSizeStats:
    if len(sets) == 0:
        raise EmptyInputError("no sets")
    if isinstance(sets, np.ndarray) and sets.ndim == 2:
        sizes, k = sets.sum(axis=1), sets.shape[1]
    else:
        sizes = np.array([len(s) for s in sets])
        k = max(s.label_count for s in sets)
    hist = np.bincount(sizes, minlength=k + 1)
    return SetSizeStats(float(sizes.mean()), hist, float(np.mean(sizes == 0)))


@dataclass(frozen=True)
class CoverageReplications:
    """Per-replication outcome arrays of a repeated split-conformal run."""

    coverage: np.ndarray
    mean_set_size: np.ndarray
    empty_fraction: np.ndarray
    threshold: np.ndarray

    def __len__(self):
        return len(self.coverage)

    def mean(self) -> float:
        return float(self.coverage.mean())

    def std(self) -> float:
        return float(self.coverage.std(ddof=1)) if len(self) > 1 else 0.0

    def std_error(self) -> float:
        return self.std() / math.sqrt(len(self))


def _run_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def replicate_coverage(
    dgp,
    predictor,
    score_fn,
    alpha: float,
    n_cal: int,
    n_test: int,
    reps: int,
    master_seed: int,
    threads: int = 1,
    force_nonempty: bool = False,
) -> CoverageReplications:
    """Repeat calibrate-then-test with a fresh calibration and test draw each time.

    Replication ``r`` draws from ``RngStream(master_seed, (r, ...))`` so the
    output does not depend on ``threads``.
    """
    if reps < 1:
        raise CPDecideError("reps must be at least 1")
    fn = ScoreFn.coerce(score_fn)
    alpha = check_alpha(alpha)
    root = RngStream(master_seed)

    def one(r):
        stream = root.spawn(r)
        cal = dgp.draw(n_cal, stream.spawn(CAL_STREAM))
        test = dgp.draw(n_test, stream.spawn(TEST_STREAM))
        est = SplitConformalClassifier(fn.kind, alpha, fn.randomized, force_nonempty)
        est.fit(predictor.predict_proba(cal.x), cal.y, stream.spawn(CAL_UNIFORM_STREAM))
        M = est.predict(predictor.predict_proba(test.x), stream.spawn(TEST_UNIFORM_STREAM))
        sizes = M.sum(axis=1)
        return coverage(M, test.y), sizes.mean(), np.mean(sizes == 0), est.threshold_

    out = np.array(_run_map(one, range(reps), threads), dtype=float)
    return CoverageReplications(out[:, 0], out[:, 1], out[:, 2], out[:, 3])


def exchangeable_ranks(dgp, predictor, score_fn, n: int, reps: int, master_seed: int) -> np.ndarray:
    """Rank (1..n+1) of a fresh test score among ``n`` calibration scores, per replication.

    Ties are broken uniformly at random, which keeps the rank exactly
    uniform under exchangeability even for discrete scores.
    """
    fn = ScoreFn.coerce(score_fn)
    rng = RngStream(master_seed)
    data = dgp.draw(reps * (n + 1), rng.spawn(CAL_STREAM))
    P = predictor.predict_proba(data.x)
    u = rng.spawn(CAL_UNIFORM_STREAM).random(len(data)) if fn.randomized else None
    S = score_matrix(fn, P, u)[np.arange(len(data)), data.y].reshape(reps, n + 1)
    jitter = rng.spawn(TEST_UNIFORM_STREAM).random(S.shape)
    test, tjit = S[:, -1:], jitter[:, -1:]
    below = (S[:, :-1] < test) | ((S[:, :-1] == test) & (jitter[:, :-1] < tjit))
    return below.sum(axis=1) + 1
