from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

Z95 = 1.96


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    significant: bool
    p_value: float


def welch_t_test(a, b, alpha: float = 0.05) -> WelchResult:
    """Two-sided Welch test; degenerate zero-variance inputs give t = 0 when the means agree."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return WelchResult(0.0, float(a.size + b.size - 2), False, 1.0)
        return WelchResult(math.copysign(math.inf, diff), float(a.size + b.size - 2), True, 0.0)
    t = diff / math.sqrt(se2)
    dof = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    crit = stats.t.ppf(1 - alpha / 2, dof)
    p = 2 * stats.t.sf(abs(t), dof)
    return WelchResult(float(t), float(dof), bool(abs(t) > crit), float(p))


def mean_ci(values) -> tuple[float, float | None]:
    """Mean and 95% normal-approximation half-width (None for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    if v.size == 1:
        return float(v[0]), None
    return float(v.mean()), float(Z95 * v.std(ddof=1) / math.sqrt(v.size))
