"""Input validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


def check_array(x, *, ndim=None, name="array", dtype=float) -> np.ndarray:
    """Return ``x`` as a finite numpy array of the requested rank."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_scalar(x, name, *, min_val=None, max_val=None, include_min=True, include_max=True):
    if not isinstance(x, numbers.Real) or isinstance(x, bool):
        raise TypeError(f"{name} must be a real number, got {type(x).__name__}")
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x}")
    if min_val is not None:
        if (include_min and x < min_val) or (not include_min and x <= min_val):
            op = ">=" if include_min else ">"
            raise ValueError(f"{name} must be {op} {min_val}, got {x}")
    if max_val is not None:
        if (include_max and x > max_val) or (not include_max and x >= max_val):
            op = "<=" if include_max else "<"
            raise ValueError(f"{name} must be {op} {max_val}, got {x}")
    return x


def check_count(x, name, *, min_val=0) -> int:
    if not isinstance(x, numbers.Integral) or isinstance(x, bool):
        raise TypeError(f"{name} must be an integer, got {type(x).__name__}")
    if x < min_val:
        raise ValueError(f"{name} must be >= {min_val}, got {x}")
    return int(x)


def check_simplex_rows(mat, name, *, atol=1e-12) -> np.ndarray:
    """Check that every row of ``mat`` is a probability vector."""
    mat = check_array(mat, ndim=2, name=name)
    if np.any(mat < 0):
        raise ValueError(f"{name} has negative entries")
    sums = mat.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ValueError(f"{name} row {bad[0]} sums to {sums[bad[0]]!r}, expected 1")
    return mat


def check_probability_vector(p, name, *, atol=1e-12) -> np.ndarray:
    p = check_array(p, ndim=1, name=name)
    if p.size == 0:
        raise ValueError(f"{name} is empty")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} sums to {p.sum()!r}, expected 1")
    return p


def check_state_indices(states, num_states, name="states") -> np.ndarray:
    states = np.asarray(states)
    if states.dtype.kind not in "iu":
        raise TypeError(f"{name} must hold integer indices")
    if states.size and (states.min() < 0 or states.max() >= num_states):
        raise ValueError(f"{name} out of range [0, {num_states})")
    return states.astype(np.intp, copy=False)
