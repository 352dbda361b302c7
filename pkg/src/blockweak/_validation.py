"""Input validation and block-layout helpers shared across modules."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_matrix(A, name="A"):
    """Dense float64 2-D array with finite entries."""
    return check_array(A, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                       ensure_min_samples=1, ensure_min_features=1, input_name=name)


def check_vector(v, length=None, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_block_matrix(A, d):
    """Validate ``A`` and return ``(A, n_blocks)`` for block length ``d``."""
    A = check_matrix(A)
    d = check_positive_int(d, "d")
    if A.shape[1] % d:
        raise ValueError(f"block length d={d} does not divide the {A.shape[1]} columns of A")
    return A, A.shape[1] // d


def check_support(support, n):
    s = np.asarray(support, dtype=np.int64).reshape(-1)
    if s.size and (s.min() < 0 or s.max() >= n):
        raise ValueError(f"support indices must lie in [0, {n})")
    if np.unique(s).size != s.size:
        raise ValueError("support indices must be distinct")
    return s


def check_directions(directions, k, d, atol=1e-12):
    D = np.asarray(directions, dtype=np.float64).reshape(k, d) if k else np.zeros((0, d))
    if k:
        norms = np.linalg.norm(D, axis=1)
        if np.any(np.abs(norms - 1.0) > atol):
            raise ValueError("every direction must have unit Euclidean norm")
    return D


def blocks(x, d):
    """View a length ``d*n`` vector as an ``(n, d)`` array of blocks."""
    return np.asarray(x).reshape(-1, d)


def block_norms(x, d):
    return np.linalg.norm(blocks(x, d), axis=1)


def directions_from_signal(x, d):
    """Support (ascending) and unit block directions of a block-sparse ``x``."""
    B = blocks(x, d)
    norms = np.linalg.norm(B, axis=1)
    support = np.flatnonzero(norms > 0)
    return support, B[support] / norms[support, None]
