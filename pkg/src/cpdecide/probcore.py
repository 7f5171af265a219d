"""Finite discrete probability: distributions, joint tables, Bayes rule, RNG streams.

Categories are dense indices ``0..K-1``. Label names, where they exist, live
in the harness and never in these types.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    AllZeroError,
    CPDecideError,
    NegativeWeightError,
    ZeroMarginalError,
)

PROB_TOL = 1e-9

StreamKey = Union[int, Tuple[int, ...]]


def _check_probs(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise CPDecideError(f"{what} has non-finite entries")
    if np.any(arr < 0):
        raise NegativeWeightError(f"{what} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise CPDecideError(f"{what} sums to {total!r}, expected 1")


@dataclass(frozen=True)
class Distribution:
    """Probability vector over ``len(probs)`` categories."""

    probs: np.ndarray

    def __init__(self, probs):
        arr = np.array(probs, dtype=float).reshape(-1)
        if arr.size == 0:
            raise CPDecideError("distribution needs at least one category")
        _check_probs(arr, "distribution")
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, i):
        return self.probs[i]

    def __iter__(self):
        return iter(self.probs.tolist())

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.all(self.probs == other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"Distribution({np.array2string(self.probs, precision=6)})"

    @property
    def size(self) -> int:
        return self.probs.size

    def argmax(self) -> int:
        """Index of the largest mass, lowest index on ties."""
        return int(np.argmax(self.probs))

    @classmethod
    def uniform(cls, k: int) -> "Distribution":
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def one_hot(cls, k: int, i: int) -> "Distribution":
        p = np.zeros(k)
        p[i] = 1.0
        return cls(p)


@dataclass(frozen=True)
class JointTable:
    """Joint probabilities ``table[v, s]`` over signal ``v`` and state ``s``."""

    table: np.ndarray

    def __init__(self, table):
        arr = np.array(table, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise CPDecideError("joint table must be a non-empty 2-D array")
        _check_probs(arr, "joint table")
        arr.setflags(write=False)
        object.__setattr__(self, "table", arr)

    @property
    def signal_count(self) -> int:
        return self.table.shape[0]

    @property
    def state_count(self) -> int:
        return self.table.shape[1]

    def signal_marginal(self) -> Distribution:
        return normalize(self.table.sum(axis=1))

    def state_marginal(self) -> Distribution:
        return normalize(self.table.sum(axis=0))

    @classmethod
    def from_counts(cls, counts) -> "JointTable":
        arr = np.asarray(counts, dtype=float)
        return cls(arr / arr.sum())


def normalize(weights: Sequence[float]) -> Distribution:
    """Scale non-negative weights so they sum to one."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(w < 0):
        raise NegativeWeightError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise AllZeroError("weights sum to zero")
    return Distribution(w / total)


def bayes_posterior(joint: JointTable, v: int) -> Distribution:
    """State posterior ``p(s | v)`` from a joint table."""
    row = joint.table[v]
    mass = row.sum()
    if mass <= 0:
        raise ZeroMarginalError(f"signal {v} has zero marginal probability")
    return Distribution(row / mass)


def entropy(dist: Distribution) -> float:
    """Shannon entropy in nats with ``0 ln 0 = 0``."""
    p = dist.probs[dist.probs > 0]
    return float(-np.sum(p * np.log(p)))


class RngStream:
    """Seeded random stream addressed by ``(seed, stream_id)``.

    Streams are built on a Philox counter-based generator keyed through
    :class:`numpy.random.SeedSequence`, so ``spawn`` yields independent
    children whose output depends only on the key path, never on how many
    draws the parent made. Each unit of parallel work owns its own stream.
    """

    def __init__(self, seed: int, stream_id: StreamKey = 0):
        if seed < 0 or seed >= 2**64:
            raise CPDecideError("seed must be an unsigned 64-bit integer")
        key = (stream_id,) if isinstance(stream_id, (int, np.integer)) else tuple(stream_id)
        if any(k < 0 or k >= 2**64 for k in key):
            raise CPDecideError("stream ids must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, *keys: int) -> "RngStream":
        """Child stream at ``stream_id + keys``."""
        return RngStream(self.seed, self.stream_id + tuple(keys))

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)


def sample(dist: Distribution, rng: RngStream) -> int:
    """Draw one category index."""
    return int(sample_many(dist.probs, 1, rng)[0])


def sample_many(probs, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` i.i.d. category indices by inverse CDF."""
    p = np.asarray(probs, dtype=float).reshape(-1)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = rng.random(n)
    idx = np.searchsorted(cdf, u, side="right")
    # categories with zero mass can never be selected
    return np.minimum(idx, p.size - 1)


def sample_rows(prob_matrix: np.ndarray, rng: RngStream) -> np.ndarray:
    """One categorical draw per row of a probability matrix."""
    cdf = np.cumsum(prob_matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(prob_matrix.shape[0])
    return np.minimum((cdf <= u[:, None]).sum(axis=1), prob_matrix.shape[1] - 1)
