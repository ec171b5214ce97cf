"""Nearest-neighbour mutual-information estimators (nats).

Distances come from brute-force ``cdist`` in row chunks; at the sample sizes used here
(a few thousand points) this is exact, fast enough, and keeps sub-1e-9 tie-breaking
jitter intact, which tree-based radius queries can blur.
"""
from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import digamma

JITTER = 1e-10
_CHUNK = 512


class EstimatorWarning(UserWarning):
    pass


@dataclass
class MiEstimate:
    value: float
    tag: str = ""
    k: int = 3
    n: int = 0
    warnings: list = field(default_factory=list)

    @property
    def clamped(self) -> float:
        return max(self.value, 0.0)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("expected a vector or a 2-d array")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def jitter(x: np.ndarray, seed: int = 0, scale: float = JITTER) -> np.ndarray:
    """Add tie-breaking noise of size ``scale`` times each column's spread.

    The noise stream is keyed on the block's own bytes, so results do not depend on
    where the block came from.
    """
    x = _as_2d(x)
    key = zlib.crc32(np.ascontiguousarray(x).tobytes())
    rng = np.random.default_rng([seed, key])
    spread = x.std(axis=0)
    spread = np.where(spread > 0, spread, 1.0)
    return x + scale * spread * rng.standard_normal(x.shape)


def jitter_pair(x: np.ndarray, y: np.ndarray, seed: int = 0, scale: float = JITTER):
    """Jitter two blocks from one stream keyed on both, in an order fixed by content.

    Swapping the arguments swaps the outputs, and identical blocks (a constant map
    applied to consecutive states, say) still receive independent noise.
    """
    x, y = _as_2d(x), _as_2d(y)
    kx = zlib.crc32(np.ascontiguousarray(x).tobytes())
    ky = zlib.crc32(np.ascontiguousarray(y).tobytes())
    rng = np.random.default_rng([seed, min(kx, ky), max(kx, ky)])
    swap = (ky, y.shape[1]) < (kx, x.shape[1])
    first, second = (y, x) if swap else (x, y)
    out = []
    for block in (first, second):
        spread = block.std(axis=0)
        spread = np.where(spread > 0, spread, 1.0)
        out.append(block + scale * spread * rng.standard_normal(block.shape))
    return (out[1], out[0]) if swap else (out[0], out[1])


def _kth_distances(points: np.ndarray, k: int) -> np.ndarray:
    n = points.shape[0]
    out = np.empty(n)
    for start in range(0, n, _CHUNK):
        d = cdist(points[start:start + _CHUNK], points)
        rows = np.arange(d.shape[0])
        d[rows, start + rows] = np.inf
        out[start:start + _CHUNK] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return out


def _count_within(points: np.ndarray, radius: np.ndarray, strict: bool) -> np.ndarray:
    """Neighbours of each point (self excluded) inside its own radius."""
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    for start in range(0, n, _CHUNK):
        d = cdist(points[start:start + _CHUNK], points)
        r = radius[start:start + _CHUNK, None]
        inside = d < r if strict else d <= r
        out[start:start + _CHUNK] = inside.sum(axis=1) - 1
    return out


def ksg_mi_cc(x, y, k: int = 3, seed: int = 0, add_jitter: bool = True, tag: str = "") -> MiEstimate:
    """KSG estimator (first variant): Euclidean within each block, max-norm across blocks."""
    x, y = _as_2d(x), _as_2d(y)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y must have the same number of rows")
    if k < 1 or n <= k:
        raise ValueError(f"need 1 <= k < n (k={k}, n={n})")
    if add_jitter:
        x, y = jitter_pair(x, y, seed)
    eps = np.empty(n)
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    for start in range(0, n, _CHUNK):
        dx = cdist(x[start:start + _CHUNK], x)
        dy = cdist(y[start:start + _CHUNK], y)
        rows = np.arange(dx.shape[0])
        joint = np.maximum(dx, dy)
        joint[rows, start + rows] = np.inf
        e = np.partition(joint, k - 1, axis=1)[:, k - 1]
        eps[start:start + _CHUNK] = e
        nx[start:start + _CHUNK] = (dx < e[:, None]).sum(axis=1) - 1
        ny[start:start + _CHUNK] = (dy < e[:, None]).sum(axis=1) - 1
    value = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return MiEstimate(float(value), tag=tag, k=k, n=n)


def mi_cd(x, labels, k: int = 3, seed: int = 0, add_jitter: bool = True, tag: str = "") -> MiEstimate:
    """Continuous-discrete estimator built on same-label neighbourhoods.

    A sample whose label has at most ``k`` members uses ``k_i = count - 1``; labels
    seen once cannot define a neighbourhood and their samples are dropped. Both cases
    are recorded in ``warnings``.
    """
    x = _as_2d(x)
    labels = np.asarray(labels)
    if labels.ndim > 1:
        labels = np.unique(labels, axis=0, return_inverse=True)[1].reshape(-1)
    n = x.shape[0]
    if labels.shape[0] != n:
        raise ValueError("x and labels must have the same number of rows")
    if k < 1 or n <= k:
        raise ValueError(f"need 1 <= k < n (k={k}, n={n})")
    if add_jitter:
        x = jitter(x, seed)
    notes = []
    uniq, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    keep = counts[inverse] > 1
    if not keep.all():
        notes.append(f"dropped {int((~keep).sum())} samples whose label occurs once")
    small = (counts > 1) & (counts <= k)
    if small.any():
        notes.append(f"reduced k for {int(counts[small].sum())} samples in {int(small.sum())} small labels")
    for msg in notes:
        warnings.warn(msg, EstimatorWarning, stacklevel=2)
    x, inverse = x[keep], inverse[keep]
    m = x.shape[0]
    if m <= k:
        raise ValueError("too few samples left after dropping singleton labels")
    radius = np.empty(m)
    k_local = np.empty(m, dtype=np.int64)
    label_n = counts[inverse]
    for lab in np.unique(inverse):
        idx = np.flatnonzero(inverse == lab)
        kk = min(k, idx.size - 1)
        radius[idx] = _kth_distances(x[idx], kk)
        k_local[idx] = kk
    within = _count_within(x, radius, strict=False)
    value = digamma(m) - np.mean(digamma(label_n)) + np.mean(digamma(k_local)) - np.mean(digamma(within))
    return MiEstimate(float(value), tag=tag, k=k, n=m, warnings=notes)
