"""Input validation shared by the estimators and metrics."""
import numpy as np

from .exceptions import (
    AlphaOutOfRangeError,
    CPDecideError,
    LabelOutOfRangeError,
    LengthMismatchError,
    NotFittedError,
)


def check_prob_matrix(P, name="probabilities", atol=1e-6):
    """Return ``P`` as a 2-D float array whose rows are distributions."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2 or P.shape[1] == 0:
        raise CPDecideError(f"{name} must be a 2-D array of shape (n, K)")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise CPDecideError(f"{name} must be finite and non-negative")
    if P.shape[0] and np.max(np.abs(P.sum(axis=1) - 1.0)) > atol:
        raise CPDecideError(f"rows of {name} must sum to 1")
    return P


def check_labels(y, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise CPDecideError("labels must be a 1-D array")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise CPDecideError("labels must be integer class indices")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or (n_classes is not None and y.max() >= n_classes)):
        raise LabelOutOfRangeError("label index out of range")
    return y


def check_consistent_length(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise LengthMismatchError(f"inputs have inconsistent lengths {sorted(lengths)}")


def check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRangeError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"this {type(estimator).__name__} instance is not fitted yet; call 'fit' first"
        )
