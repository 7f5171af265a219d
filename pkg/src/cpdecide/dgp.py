"""Synthetic data-generating processes with exact posterior oracles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.special import softmax

from .exceptions import CPDecideError, DomainMismatchError, ZeroMarginalError
from .probcore import Distribution, JointTable, RngStream, sample_many


@dataclass(frozen=True)
class LabeledSample:
    x: object
    y: int
    w: Optional[int] = None


class Samples:
    """Column-oriented batch of labeled samples.

    Behaves as a sequence of :class:`LabeledSample` while keeping the
    columns as arrays for vectorized work.
    """

    def __init__(self, x, y, w=None):
        self.x = np.asarray(x)
        self.y = np.asarray(y, dtype=np.int64)
        self.w = None if w is None else np.asarray(w, dtype=np.int64)
        if len(self.x) != len(self.y) or (self.w is not None and len(self.w) != len(self.y)):
            raise CPDecideError("sample columns have different lengths")

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Samples(self.x[i], self.y[i], None if self.w is None else self.w[i])
        x = self.x[i]
        x = int(x) if x.ndim == 0 else x
        w = None if self.w is None else int(self.w[i])
        return LabeledSample(x=x, y=int(self.y[i]), w=w)

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, records) -> "Samples":
        records = list(records)
        xs = [r.x for r in records]
        ws = [r.w for r in records]
        w = None if any(v is None for v in ws) else ws
        return cls(xs, [r.y for r in records], w)


class TabularDGP:
    """Finite feature index ``x`` and label ``y`` with joint ``table[x, y]``."""

    def __init__(self, joint):
        self.joint = joint if isinstance(joint, JointTable) else JointTable(joint)
        if np.any(self.joint.table.sum(axis=0) <= 0):
            raise CPDecideError("every label needs positive marginal probability")

    def __repr__(self):
        return f"TabularDGP(features={self.feature_count}, labels={self.label_count})"

    @property
    def feature_count(self) -> int:
        return self.joint.signal_count

    @property
    def label_count(self) -> int:
        return self.joint.state_count

    @property
    def prior(self) -> Distribution:
        return self.joint.state_marginal()

    def draw(self, n: int, rng: RngStream) -> Samples:
        if n < 1:
            raise CPDecideError("n must be at least 1")
        cells = sample_many(self.joint.table.reshape(-1), n, rng)
        x, y = np.divmod(cells, self.label_count)
        return Samples(x, y)

    def true_posterior(self, x) -> Distribution:
        x = self._check_x(x)
        row = self.joint.table[x]
        mass = row.sum()
        if mass <= 0:
            raise ZeroMarginalError(f"feature value {x} has zero probability")
        return Distribution(row / mass)

    def posterior_matrix(self, xs=None) -> np.ndarray:
        """Rows ``p(. | x)``; rows for zero-probability ``x`` are uniform."""
        t = self.joint.table
        mass = t.sum(axis=1, keepdims=True)
        out = np.where(mass > 0, t / np.where(mass > 0, mass, 1.0), 1.0 / self.label_count)
        if xs is None:
            return out
        xs = np.asarray(xs)
        if xs.ndim != 1 or not np.issubdtype(xs.dtype, np.integer):
            raise DomainMismatchError("tabular features must be a 1-D integer array")
        if xs.size and (xs.min() < 0 or xs.max() >= self.feature_count):
            raise DomainMismatchError("feature index out of range")
        return out[xs]

    def _check_x(self, x) -> int:
        if isinstance(x, np.ndarray) and x.ndim > 0:
            raise DomainMismatchError("tabular feature must be a scalar index")
        if not isinstance(x, (int, np.integer)) or not 0 <= x < self.feature_count:
            raise DomainMismatchError(f"feature index {x!r} out of range")
        return int(x)


class GaussianMixtureDGP:
    """Labels from ``prior``; features ``x ~ N(means[y], sigma^2 I)``."""

    def __init__(self, prior, means, sigma: float):
        self.prior = prior if isinstance(prior, Distribution) else Distribution(prior)
        self.means = np.array(means, dtype=float)
        if self.means.ndim == 1:
            self.means = self.means[:, None]
        self.sigma = float(sigma)
        k = len(self.prior)
        if k < 2:
            raise CPDecideError("need at least two labels")
        if self.means.shape[0] != k or self.means.shape[1] < 1:
            raise CPDecideError("means must have one row per label")
        if not self.sigma > 0:
            raise CPDecideError("sigma must be positive")
        self.means.setflags(write=False)

    def __repr__(self):
        return f"GaussianMixtureDGP(labels={self.label_count}, dim={self.dim}, sigma={self.sigma})"

    @property
    def label_count(self) -> int:
        return len(self.prior)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def draw(self, n: int, rng: RngStream) -> Samples:
        if n < 1:
            raise CPDecideError("n must be at least 1")
        y = sample_many(self.prior.probs, n, rng)
        x = self.means[y] + self.sigma * rng.normal((n, self.dim))
        return Samples(x, y)

    def _logits(self, X: np.ndarray) -> np.ndarray:
        s2 = self.sigma**2
        with np.errstate(divide="ignore"):
            log_prior = np.log(self.prior.probs)
        return X @ self.means.T / s2 - 0.5 * np.sum(self.means**2, axis=1) / s2 + log_prior

    def posterior_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.dim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DomainMismatchError(f"expected features of dimension {self.dim}")
        return softmax(self._logits(X), axis=1)

    def true_posterior(self, x) -> Distribution:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise DomainMismatchError(f"expected a feature vector of dimension {self.dim}")
        return Distribution(self.posterior_matrix(x[None, :])[0])


class PrivateSignalDGP:
    """Joint ``joint3[x, w, y]`` over a public feature, a private signal and a label."""

    def __init__(self, joint3):
        arr = np.array(joint3, dtype=float)
        if arr.ndim != 3:
            raise CPDecideError("joint3 must be a 3-D table indexed (x, w, y)")
        if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
            raise CPDecideError("joint3 must be non-negative and sum to 1")
        arr.setflags(write=False)
        self.joint3 = arr
        self._public = TabularDGP(arr.sum(axis=1))

    def __repr__(self):
        x, w, y = self.joint3.shape
        return f"PrivateSignalDGP(features={x}, signals={w}, labels={y})"

    @property
    def label_count(self) -> int:
        return self.joint3.shape[2]

    @property
    def feature_count(self) -> int:
        return self.joint3.shape[0]

    @property
    def signal_count(self) -> int:
        return self.joint3.shape[1]

    @property
    def prior(self) -> Distribution:
        return self._public.prior

    def marginal(self) -> TabularDGP:
        """The public-feature DGP obtained by summing out ``w``."""
        return self._public

    def draw(self, n: int, rng: RngStream) -> Samples:
        if n < 1:
            raise CPDecideError("n must be at least 1")
        cells = sample_many(self.joint3.reshape(-1), n, rng)
        x, rest = np.divmod(cells, self.signal_count * self.label_count)
        w, y = np.divmod(rest, self.label_count)
        return Samples(x, y, w)

    def true_posterior(self, x) -> Distribution:
        return self._public.true_posterior(x)

    def posterior_matrix(self, xs=None) -> np.ndarray:
        return self._public.posterior_matrix(xs)

    def true_posterior_full(self, x, w) -> Distribution:
        x = self._public._check_x(x)
        if not isinstance(w, (int, np.integer)) or not 0 <= w < self.signal_count:
            raise DomainMismatchError(f"private signal {w!r} out of range")
        row = self.joint3[x, w]
        mass = row.sum()
        if mass <= 0:
            raise ZeroMarginalError(f"(x={x}, w={w}) has zero probability")
        return Distribution(row / mass)

    def full_posterior_matrix(self) -> np.ndarray:
        """Array ``[x, w, :]`` of ``p(y | x, w)``; uniform where ``p(x, w) = 0``."""
        mass = self.joint3.sum(axis=2, keepdims=True)
        safe = np.where(mass > 0, mass, 1.0)
        return np.where(mass > 0, self.joint3 / safe, 1.0 / self.label_count)


def make_private_worstcase(k: int) -> PrivateSignalDGP:
    """Uniform labels, one uninformative feature value, private signal ``w == y``."""
    if k < 2:
        raise CPDecideError("need at least two labels")
    joint3 = np.zeros((1, k, k))
    joint3[0, np.arange(k), np.arange(k)] = 1.0 / k
    return PrivateSignalDGP(joint3)
