"""Input checks shared by the estimator front end."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_state(x, n: int) -> np.ndarray:
    x = check_array(np.asarray(x, dtype=float).reshape(1, -1), ensure_all_finite=True)[0]
    if x.shape != (n,):
        raise ValueError(f"expected a state of length {n}, got {x.shape[0]}")
    return x


def check_observations(X, n: int) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != n:
        raise ValueError(f"expected observations with {n} columns, got {X.shape[1]}")
    return X
