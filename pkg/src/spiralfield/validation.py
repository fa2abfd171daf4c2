"""Input validation shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def check_token_matrix(X, vocab_size: int, min_len: int = 2) -> np.ndarray:
    """Validate an (n, seq) integer token matrix and return it as int64.

    Accepts lists or arrays; rejects empty sets, float dtypes, sequences
    shorter than min_len, and ids outside [0, vocab_size).
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d (n, seq) token matrix, got shape {X.shape}")
    if X.shape[0] < 1:
        raise ValueError("token matrix is empty")
    if X.shape[1] < min_len:
        raise ValueError(f"sequences must have at least {min_len} tokens, got {X.shape[1]}")
    if not np.issubdtype(X.dtype, np.integer):
        raise ValueError(f"token matrix must be integer-typed, got dtype {X.dtype}")
    if X.min() < 0 or X.max() >= vocab_size:
        raise ValueError(f"token ids must lie in [0, {vocab_size})")
    return X.astype(np.int64, copy=False)


def check_component_array(X) -> np.ndarray:
    """Validate an (n, 2) finite float component array and return float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) component array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("components must be finite")
    return X
