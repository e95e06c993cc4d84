"""Rejection thresholds, step-up scan and adjusted p-values for every method.

Every procedure is expressed through a per-rank scale ``s(j)`` so that the
rank-``j`` p-value of a group is rejected by the scan iff
``p_(j) <= alpha * s(j)``. Internally the reciprocal ``1 / s(j)`` is kept,
which makes ``p_(j) / s(j)`` a single multiplication.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import (
    AdjustmentResult,
    CastError,
    GroupDiagnostics,
    GroupedPValueSet,
    Method,
)
from .correlation import DEFAULT_CLAMP, GroupCorrelation, InvalidCorrelation, mean_row_correlation
from .pi0 import estimate_pi0_lsl

FALLBACK_TOL = 1e-12


class FallbackRequired(CastError, ArithmeticError):
    """The rank-1 mean correlation is exactly -1; the harmonic factor must be used."""


class MissingCorrelation(CastError, ValueError):
    pass


@functools.lru_cache(maxsize=4096)
def _harmonic_terms(m: int) -> np.ndarray:
    terms = 1.0 / np.arange(1, m + 1, dtype=float)
    terms.setflags(write=False)
    return terms


@functools.lru_cache(maxsize=4096)
def harmonic_factor(m: int) -> float:
    """Partial harmonic sum ``sum_{j=1}^m 1/j``."""
    if m < 1:
        raise ValueError("harmonic_factor needs m >= 1")
    return float(np.sum(_harmonic_terms(m)))


def between_group_factor(n_groups: int, size: int, n_total: int) -> float:
    """``M_g / min(G * M_g, M)``, i.e. ``max(1/G, M_g/M)``."""
    if not (1 <= size <= n_total) or n_groups < 1:
        raise ValueError("need 1 <= M_g <= M and G >= 1")
    return size / min(n_groups * size, n_total)


def _check_rbar(rbar: np.ndarray) -> None:
    if np.any(np.isnan(rbar)) or np.any(rbar > 1 + 1e-12) or np.any(rbar < -1 - FALLBACK_TOL):
        raise InvalidCorrelation("mean correlations must lie in [-1, 1]")


def lcast_factor(rbar_ranked, delta: float = DEFAULT_CLAMP) -> float:
    """Linear CAST correlation factor for one group.

    ``rbar_ranked[j-1]`` is the mean correlation of the feature holding
    p-value rank ``j``. Each summand ``1 - (j-1)/(j+r)`` is evaluated as
    ``(1+r)/(j+r)``, which equals ``1/j`` exactly when ``r = 0``.

    Raises
    ------
    FallbackRequired
        If the rank-1 mean correlation is -1.
    """
    r = np.asarray(rbar_ranked, dtype=float)
    if r.size == 0:
        raise ValueError("lcast_factor needs at least one feature")
    _check_rbar(r)
    if abs(r[0] + 1.0) <= FALLBACK_TOL:
        raise FallbackRequired("rank-1 mean correlation is -1")
    r = np.clip(r, -1.0 + delta, 1.0)
    j = np.arange(1, r.size + 1, dtype=float)
    return float(np.sum((1.0 + r) / (j + r)))


def qcast_factor(size: int, j: int, rbar: float, delta: float = DEFAULT_CLAMP) -> float:
    """Quadratic CAST factor ``M_g (1 + r) / (j + r)`` at rank ``j``."""
    if not 1 <= j <= size:
        raise ValueError("rank j must lie in 1..M_g")
    r = float(rbar)
    _check_rbar(np.array([r]))
    if j == 1 and abs(r + 1.0) <= FALLBACK_TOL:
        raise FallbackRequired("rank-1 mean correlation is -1")
    r = min(max(r, -1.0 + delta), 1.0)
    return size * (1.0 + r) / (j + r)


def qcast_factors(rbar_ranked, delta: float = DEFAULT_CLAMP) -> np.ndarray:
    """Quadratic CAST factors for every rank of one group.

    Raises
    ------
    FallbackRequired
        If the rank-1 mean correlation is -1.
    """
    r = np.asarray(rbar_ranked, dtype=float)
    _check_rbar(r)
    if r.size and abs(r[0] + 1.0) <= FALLBACK_TOL:
        raise FallbackRequired("rank-1 mean correlation is -1")
    r = np.clip(r, -1.0 + delta, 1.0)
    j = np.arange(1, r.size + 1, dtype=float)
    return r.size * (1.0 + r) / (j + r)


@dataclass(frozen=True)
class GroupContext:
    """Everything a threshold needs about one group.

    For the ungrouped methods (Bonferroni, BH, BY) ``size`` is the pooled
    number of tests and ``n_groups`` is 1.
    """

    size: int
    n_groups: int
    n_total: int
    pi0: float = 1.0
    rbar_ranked: np.ndarray | None = None
    delta: float = DEFAULT_CLAMP


@dataclass(frozen=True)
class Scale:
    """Per-rank reciprocal scales ``1/s(j)`` plus the factors behind them."""

    inverse: np.ndarray
    between_factor: float
    c_factor: float | np.ndarray | None
    fallback_used: bool

    @property
    def scale(self) -> np.ndarray:
        return 1.0 / self.inverse


def compute_scale(method: Method, ctx: GroupContext) -> Scale:
    method = Method.parse(method)
    m = ctx.size
    if m < 1:
        raise ValueError("group size must be >= 1")
    if not 0.0 < ctx.pi0 <= 1.0:
        raise ValueError("pi0 must lie in (0, 1]")
    j = np.arange(1, m + 1, dtype=float)
    fallback = False
    if method is Method.BONFERRONI:
        return Scale(np.full(m, float(ctx.n_total)), 1.0, None, False)
    if method in (Method.BH, Method.GBH):
        return Scale(ctx.pi0 * m / j, 1.0, None, False)
    if method in (Method.BY, Method.GBY):
        c = harmonic_factor(m)
        return Scale(ctx.pi0 * m * c / j, 1.0, c, False)

    denom = min(ctx.n_groups * m, ctx.n_total)
    a_b = m / denom
    if m == 1:
        rbar = np.ones(1)
    elif ctx.rbar_ranked is None:
        raise MissingCorrelation("LCAST/QCAST need mean correlations for multi-feature groups")
    else:
        rbar = np.asarray(ctx.rbar_ranked, dtype=float)
        if rbar.shape != (m,):
            raise ValueError(f"expected {m} mean correlations, got {rbar.shape}")
    if method is Method.LCAST:
        try:
            c = lcast_factor(rbar, ctx.delta)
        except FallbackRequired:
            c = harmonic_factor(m)
            fallback = True
        inverse = ctx.pi0 * denom * c / j
        return Scale(inverse, a_b, c, fallback)
    if method is Method.QCAST:
        try:
            c = qcast_factors(rbar, ctx.delta)
        except FallbackRequired:
            # substitute only the rank-1 term; the remaining ranks stay finite under the clamp
            c = qcast_factors(np.concatenate(([0.0], rbar[1:])), ctx.delta)
            c[0] = harmonic_factor(m)
            fallback = True
        inverse = ctx.pi0 * denom * c / j
        return Scale(inverse, a_b, c, fallback)
    raise ValueError(f"unsupported method {method}")


def threshold_scale(method: Method, ctx: GroupContext, j: int) -> float:
    """Scale ``s(j)`` with the rule: reject rank ``j`` iff ``p <= alpha * s(j)``."""
    if not 1 <= j <= ctx.size:
        raise ValueError("rank j must lie in 1..M_g")
    return float(1.0 / compute_scale(method, ctx).inverse[j - 1])


def step_up(sorted_pvalues, thresholds) -> int:
    """Number of rejections ``max{j : p_(j) <= t(j)}`` (0 if none).

    Equivalent to scanning from the largest p-value downwards and stopping
    at the first one that falls on or below its threshold. No monotone
    envelope is applied to ``thresholds``.
    """
    p = np.asarray(sorted_pvalues, dtype=float)
    t = np.broadcast_to(np.asarray(thresholds, dtype=float), p.shape)
    hits = np.flatnonzero(p <= t)
    return int(hits[-1]) + 1 if hits.size else 0


def adjusted_pvalues(sorted_pvalues, scales=None, *, inverse_scales=None) -> np.ndarray:
    """Step-up adjusted p-values ``min(1, min_{k>=j} p_(k) / s(k))``.

    Pass either ``scales`` (``s``) or ``inverse_scales`` (``1/s``).
    """
    p = np.asarray(sorted_pvalues, dtype=float)
    if inverse_scales is None:
        s = np.asarray(scales, dtype=float)
        if np.any(s <= 0):
            raise ValueError("scales must be positive")
        ratios = p / s
    else:
        ratios = p * np.asarray(inverse_scales, dtype=float)
    q = np.minimum.accumulate(ratios[::-1])[::-1]
    return np.minimum(q, 1.0)


def _canonical_order(pset: GroupedPValueSet):
    features = np.asarray(pset.features)
    group_ids, codes = np.unique(np.asarray(pset.groups), return_inverse=True)
    order = np.lexsort((features, pset.pvalues, codes))
    sorted_codes = codes[order]
    starts = np.flatnonzero(np.r_[True, sorted_codes[1:] != sorted_codes[:-1]])
    bounds = np.r_[starts, order.size]
    return group_ids, order, bounds


def _resolve_rbar(
    pset: GroupedPValueSet,
    correlations: Mapping[str, GroupCorrelation] | None,
    mean_correlations: Mapping[str, float] | None,
) -> dict[str, float]:
    out: dict[str, float] = {}
    if correlations:
        for g, corr in correlations.items():
            out.update(mean_row_correlation(corr))
    if mean_correlations:
        out.update({f: float(v) for f, v in mean_correlations.items()})
    return out


def run_adjustment(
    pset: GroupedPValueSet,
    method: Method | str,
    alpha: float,
    correlations: Mapping[str, GroupCorrelation] | None = None,
    mean_correlations: Mapping[str, float] | None = None,
    delta: float = DEFAULT_CLAMP,
) -> AdjustmentResult:
    """Apply one procedure to a grouped p-value set.

    Parameters
    ----------
    pset : GroupedPValueSet
    method : Method or str
    alpha : float
        Level in (0, 1).
    correlations : mapping of group id to GroupCorrelation, optional
        Source of the mean row correlations for LCAST/QCAST.
    mean_correlations : mapping of feature id to mean correlation, optional
        Direct mean row correlations; these override ``correlations``.
    delta : float
        Clamp keeping mean correlations above ``-1 + delta``.

    Returns
    -------
    AdjustmentResult
    """
    method = Method.parse(method)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    group_ids, order, bounds = _canonical_order(pset)
    p_sorted = pset.pvalues[order]
    M = pset.M
    G = len(group_ids)
    features = np.asarray(pset.features)[order]
    groups = np.asarray(pset.groups)[order]

    rank = np.empty(M, dtype=np.int64)
    inverse = np.empty(M)
    diagnostics: list[GroupDiagnostics] = []
    for k in range(G):
        a, b = bounds[k], bounds[k + 1]
        rank[a:b] = np.arange(1, b - a + 1)

    if not method.grouped:
        pooled = np.lexsort((features, p_sorted))
        pi0 = 1.0 if method is Method.BONFERRONI else estimate_pi0_lsl(p_sorted[pooled])
        sc = compute_scale(method, GroupContext(size=M, n_groups=1, n_total=M, pi0=pi0))
        inverse[pooled] = sc.inverse
        for k, g in enumerate(group_ids):
            diagnostics.append(GroupDiagnostics(str(g), int(bounds[k + 1] - bounds[k]), pi0, 1.0, sc.c_factor))
        ratios = p_sorted * inverse
        n_rej = step_up(ratios[pooled], alpha)
        rejected = np.zeros(M, dtype=bool)
        rejected[pooled[:n_rej]] = True
        adjusted = np.empty(M)
        adjusted[pooled] = adjusted_pvalues(p_sorted[pooled], inverse_scales=sc.inverse)
    else:
        rbar_map = _resolve_rbar(pset, correlations, mean_correlations) if method.needs_correlation else {}
        rejected = np.zeros(M, dtype=bool)
        adjusted = np.empty(M)
        for k, g in enumerate(group_ids):
            a, b = int(bounds[k]), int(bounds[k + 1])
            m = b - a
            ps = p_sorted[a:b]
            pi0 = estimate_pi0_lsl(ps) if m > 1 else 1.0
            rbar = None
            if method.needs_correlation and m > 1:
                try:
                    rbar = np.fromiter((rbar_map[f] for f in features[a:b]), dtype=float, count=m)
                except KeyError as exc:
                    raise MissingCorrelation(f"no correlation for feature {exc.args[0]!r} in group {g!r}") from None
            sc = compute_scale(method, GroupContext(m, G, M, pi0, rbar, delta))
            inverse[a:b] = sc.inverse
            ratios = ps * sc.inverse
            n_rej = step_up(ratios, alpha)
            rejected[a : a + n_rej] = True
            adjusted[a:b] = adjusted_pvalues(ps, inverse_scales=sc.inverse)
            diagnostics.append(GroupDiagnostics(str(g), m, pi0, sc.between_factor, sc.c_factor, sc.fallback_used))

    return AdjustmentResult(
        method=method,
        alpha=alpha,
        features=tuple(features.tolist()),
        groups=tuple(groups.tolist()),
        rank=rank,
        pvalues=p_sorted,
        thresholds=alpha / inverse,
        adjusted=adjusted,
        rejected=rejected,
        group_diagnostics=tuple(diagnostics),
        source_index=order,
    )


def threshold_curve(method: Method | str, size: int, rbar: float, alpha: float) -> np.ndarray:
    """Thresholds ``t(1..M_g)`` for one group with constant mean correlation.

    pi0 and the between-group factor are both fixed at 1, which isolates
    the correlation factor.
    """
    method = Method.parse(method)
    ctx = GroupContext(size=size, n_groups=1, n_total=size, pi0=1.0, rbar_ranked=np.full(size, float(rbar)))
    return alpha / compute_scale(method, ctx).inverse
