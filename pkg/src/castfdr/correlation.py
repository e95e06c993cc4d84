"""Per-group correlation matrices and mean row correlations."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import CastError

DEFAULT_CLAMP = 1e-9


class DegenerateFeature(UserWarning):
    """A feature has zero sample variance; its correlations were set to 0."""


class InvalidCorrelation(CastError, ValueError):
    pass


@dataclass(frozen=True)
class GroupCorrelation:
    group: str
    order: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        r = np.array(self.matrix, dtype=float, copy=True)
        n = len(self.order)
        if r.shape != (n, n):
            raise InvalidCorrelation(f"group {self.group!r}: matrix shape {r.shape} does not match {n} features")
        if not np.allclose(r, r.T, atol=1e-12, rtol=0):
            raise InvalidCorrelation(f"group {self.group!r}: correlation matrix is not symmetric")
        if np.any(np.abs(r) > 1 + 1e-12):
            raise InvalidCorrelation(f"group {self.group!r}: correlation outside [-1, 1]")
        if not np.allclose(np.diag(r), 1.0, atol=1e-12, rtol=0):
            raise InvalidCorrelation(f"group {self.group!r}: diagonal must be 1")
        np.fill_diagonal(r, 1.0)
        r.setflags(write=False)
        object.__setattr__(self, "order", tuple(self.order))
        object.__setattr__(self, "matrix", r)


def pearson_matrix(rows) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlations of the rows of ``rows``.

    Returns the matrix and a boolean mask of zero-variance rows. Rows with
    zero variance get 0 off the diagonal.
    """
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    n = x.shape[1]
    if n < 3:
        raise InvalidCorrelation(f"need at least 3 observations per feature, got {n}")
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    scale = np.max(np.abs(x), axis=1) * np.sqrt(n)
    degenerate = norms <= 1e-13 * np.maximum(scale, 1e-300)
    safe = np.where(degenerate, 1.0, norms)
    z = centered / safe[:, None]
    r = z @ z.T
    np.clip(r, -1.0, 1.0, out=r)
    r[degenerate, :] = 0.0
    r[:, degenerate] = 0.0
    np.fill_diagonal(r, 1.0)
    return r, degenerate


def pearson_group_correlation(group: str, features: Sequence[str], rows) -> GroupCorrelation:
    """Pearson correlation matrix for one group's feature rows (features x subjects)."""
    r, degenerate = pearson_matrix(rows)
    if degenerate.any():
        names = [f for f, d in zip(features, degenerate) if d]
        warnings.warn(f"group {group!r}: zero-variance features {names}; correlations set to 0", DegenerateFeature, stacklevel=2)
    return GroupCorrelation(group, tuple(features), r)


def mean_row_correlation(corr: GroupCorrelation) -> dict[str, float]:
    """Mean of each row of the correlation matrix, diagonal included."""
    rbar = corr.matrix.mean(axis=1)
    return dict(zip(corr.order, rbar.tolist()))


def clamp_mean_correlations(rbar: Mapping[str, float], delta: float = DEFAULT_CLAMP) -> dict[str, float]:
    """Map every mean correlation into ``[-1 + delta, 1]``."""
    if not 0 < delta <= 0.01:
        raise ValueError("delta must lie in (0, 0.01]")
    lo = -1.0 + delta
    return {f: min(max(v, lo), 1.0) for f, v in rbar.items()}
