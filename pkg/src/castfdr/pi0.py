"""Lowest-slope estimate of the proportion of true null hypotheses."""

from __future__ import annotations

import math

import numpy as np

from .core import CastError, EmptyInput


class UnsortedInput(CastError, ValueError):
    pass


def estimate_pi0_lsl(sorted_pvalues) -> float:
    """Lowest-slope (LSL) estimate of pi0 for one set of p-values.

    Parameters
    ----------
    sorted_pvalues : array-like
        p-values in ascending order.

    Returns
    -------
    float
        ``m0_hat / m`` in (0, 1]. A single p-value always gives 1.

    Notes
    -----
    With ``l_i = (m + 1 - i) / (1 - p_(i))`` (infinite when ``p_(i) = 1``),
    the first index whose slope exceeds its predecessor fixes
    ``m0_hat = min(floor(l) + 1, m)``; when the slopes never increase the
    last slope is used.
    """
    p = np.asarray(sorted_pvalues, dtype=float)
    m = p.size
    if m == 0:
        raise EmptyInput("pi0 estimation needs at least one p-value")
    if m > 1 and np.any(np.diff(p) < 0):
        raise UnsortedInput("p-values must be sorted ascending")
    if m == 1:
        return 1.0
    i = np.arange(1, m + 1)
    with np.errstate(divide="ignore"):
        slopes = np.where(p >= 1.0, np.inf, (m + 1 - i) / (1.0 - p))
    up = np.flatnonzero(slopes[1:] > slopes[:-1])
    chosen = slopes[up[0] + 1] if up.size else slopes[-1]
    if math.isinf(chosen):
        return 1.0
    m0 = min(math.floor(chosen) + 1, m)
    return m0 / m
