"""Input validation shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .dataset import ExampleSet
from .errors import DomainMismatchError


def check_windows(X, shape=None, energy=True) -> np.ndarray:
    """Validate a stack of context windows and return it as an (n, F, T) array."""
    if isinstance(X, ExampleSet):
        X = X.cells
    X = check_array(X, allow_nd=True, dtype=[np.float32, np.float64], ensure_2d=False)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected windows shaped (n, F, T), got {X.shape}")
    if shape is not None and tuple(X.shape[1:]) != tuple(shape):
        raise ValueError(f"expected windows of shape {tuple(shape)}, got {X.shape[1:]}")
    if energy and X.size and X.min() < 0:
        raise DomainMismatchError("energy-domain windows must be nonnegative")
    return X


def check_features(X) -> np.ndarray:
    """2-D finite feature matrix; windows are flattened."""
    X = np.asarray(X)
    if X.ndim > 2:
        X = X.reshape(len(X), -1)
    return check_array(X, dtype=[np.float32, np.float64])


def check_multilabel(Y, n_samples=None) -> np.ndarray:
    Y = check_array(Y, dtype=None, ensure_2d=True)
    if not np.isin(Y, (0, 1)).all():
        raise ValueError("labels must be multi-hot 0/1")
    if n_samples is not None and len(Y) != n_samples:
        raise ValueError(f"{len(Y)} label rows for {n_samples} samples")
    return Y.astype(np.float32)


def multi_hot(label_sets, n_classes: int) -> np.ndarray:
    Y = np.zeros((len(label_sets), n_classes), dtype=np.float32)
    for i, labels in enumerate(label_sets):
        for c in labels:
            Y[i, c] = 1.0
    return Y
