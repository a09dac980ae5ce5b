"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array


def check_tokens(X, vocab_size: Optional[int] = None) -> np.ndarray:
    """2-D non-negative integer token matrix with at least one real token per row."""
    X = check_array(X, dtype=np.int64, ensure_2d=True, ensure_min_features=1)
    if (X < 0).any():
        raise ValueError("token ids must be non-negative")
    if vocab_size is not None and (X >= vocab_size).any():
        bad = int(X[X >= vocab_size][0])
        raise IndexError(f"token id {bad} out of range for vocabulary of size {vocab_size}")
    empty = np.nonzero(~(X != 0).any(axis=1))[0]
    if len(empty):
        raise ValueError(f"document row {int(empty[0])} has no tokens (empty attention support)")
    return X


def check_targets(Y, n_rows: int, n_labels: Optional[int] = None) -> np.ndarray:
    Y = check_array(Y, dtype=np.float64, ensure_2d=True, ensure_min_samples=1)
    if Y.shape[0] != n_rows:
        raise ValueError(f"got {Y.shape[0]} target rows for {n_rows} documents")
    if n_labels is not None and Y.shape[1] != n_labels:
        raise ValueError(f"targets have {Y.shape[1]} labels, expected {n_labels}")
    if not np.isin(Y, (0.0, 1.0)).all():
        raise ValueError("targets must be a 0/1 indicator matrix")
    return Y


def check_label_vectors(V, n_labels: Optional[int] = None) -> np.ndarray:
    V = check_array(V, dtype=np.float64, ensure_2d=True)
    if n_labels is not None and V.shape[0] != n_labels:
        raise ValueError(f"label_vectors has {V.shape[0]} rows, expected {n_labels}")
    return V
