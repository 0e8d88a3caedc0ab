"""Small input-validation helpers shared by the public surfaces."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError


def check_matrix(X, name="X", dim=None):
    """Coerce to a finite 2-D float64 array, optionally of fixed width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one row")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError(f"{name} contains NaN or inf")
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatchError(f"{name} must have {dim} columns, got {X.shape[1]}")
    return X


def check_labels(y, n_rows, name="y"):
    """Coerce labels to contiguous non-negative ints; returns (indices, classes)."""
    y = np.asarray(y)
    if y.shape != (n_rows,):
        raise DimensionMismatchError(f"{name} must have shape ({n_rows},), got {y.shape}")
    classes = np.unique(y)
    index_of = {label: i for i, label in enumerate(classes.tolist())}
    encoded = np.asarray([index_of[v] for v in y.tolist()], dtype=np.int64)
    return encoded, classes


def check_positive_int(value, name):
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be a positive integer")
    return value
