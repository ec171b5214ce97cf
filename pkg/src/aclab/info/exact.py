"""Plug-in information quantities for discrete, weighted records."""
from __future__ import annotations

import numpy as np


def exact_mi_discrete(table) -> float:
    """Mutual information of a 2-d joint probability table, 0 ln 0 taken as 0."""
    p = np.asarray(table, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("joint table must be 2-d")
    if np.any(p < 0):
        raise ValueError("negative probability")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"table sums to {p.sum()!r}, not 1")
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (px @ py)[nz])))


def codes(*columns) -> np.ndarray:
    """Integer code per row for the tuple of the given discrete columns."""
    parts = []
    for col in columns:
        col = np.asarray(col)
        parts.append(col.reshape(col.shape[0], -1).astype(np.float64))
    stacked = np.concatenate(parts, axis=1)
    return np.unique(stacked, axis=0, return_inverse=True)[1].reshape(-1)


def entropy_of(weights, *columns) -> float:
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    c = codes(*columns)
    p = np.bincount(c, weights=w)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def exact_mi(weights, x, y) -> float:
    """I(X;Y) for records with probabilities ``weights``; x and y may be multi-column."""
    return entropy_of(weights, x) + entropy_of(weights, y) - entropy_of(weights, x, y)


def exact_cmi(weights, x, y, z) -> float:
    """I(X;Y|Z) = H(X,Z) + H(Y,Z) - H(X,Y,Z) - H(Z)."""
    return (entropy_of(weights, x, z) + entropy_of(weights, y, z)
            - entropy_of(weights, x, y, z) - entropy_of(weights, z))
