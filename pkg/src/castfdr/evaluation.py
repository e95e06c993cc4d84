"""Monte Carlo performance metrics: false discovery and true positive proportions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import CastError


class CountInconsistency(CastError, ValueError):
    pass


class TooFewReplicates(CastError, ValueError):
    pass


@dataclass(frozen=True)
class ReplicateCounts:
    """Outcome of one method on one simulated dataset."""

    R: int
    V: int
    TP: int
    M1: int

    def __post_init__(self):
        if min(self.R, self.V, self.TP, self.M1) < 0 or self.V + self.TP != self.R:
            raise CountInconsistency(f"inconsistent counts {self}")
        if self.TP > self.M1:
            raise CountInconsistency(f"TP={self.TP} exceeds number of non-nulls {self.M1}")

    @property
    def fdp(self) -> float:
        return fdp(self.V, self.R)

    @property
    def tpp(self) -> float:
        return tpp(self.TP, self.M1)


def fdp(V: int, R: int) -> float:
    """False discovery proportion ``V / max(R, 1)``."""
    if V < 0 or R < 0 or V > R:
        raise CountInconsistency(f"need 0 <= V <= R, got V={V}, R={R}")
    return V / max(R, 1)


def tpp(TP: int, M1: int) -> float:
    """True positive proportion ``TP / max(M1, 1)``."""
    if TP < 0 or M1 < 0 or TP > M1:
        raise CountInconsistency(f"need 0 <= TP <= M1, got TP={TP}, M1={M1}")
    return TP / max(M1, 1)


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard deviation (denominator n - 1)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise TooFewReplicates(f"need at least 2 replicates, got {x.size}")
    mean = float(np.mean(x))
    # keep the mean inside [min, max] despite rounding
    mean = min(max(mean, float(x.min())), float(x.max()))
    return mean, float(np.std(x, ddof=1))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    replicates: int
    R_mean: float
    R_sd: float
    FDR_mean: float
    FDR_sd: float
    TPR_mean: float
    TPR_sd: float
    any_rejection_rate: float

    @classmethod
    def from_counts(cls, method: str, counts: Sequence[ReplicateCounts]) -> "MethodSummary":
        r = aggregate([c.R for c in counts])
        f = aggregate([c.fdp for c in counts])
        t = aggregate([c.tpp for c in counts])
        anyrej = sum(c.R > 0 for c in counts) / len(counts)
        return cls(method, len(counts), *r, *f, *t, anyrej)


@dataclass(frozen=True)
class EvaluationSummary:
    """Per-method summaries for one grid point."""

    grid_point: int
    scenario: Mapping[str, object]
    methods: dict[str, MethodSummary] = field(default_factory=dict)

    def __getitem__(self, method: str) -> MethodSummary:
        return self.methods[method]


def summarize(grid_point: int, scenario: Mapping[str, object], counts: Mapping[str, Sequence[ReplicateCounts]]) -> EvaluationSummary:
    return EvaluationSummary(grid_point, dict(scenario), {m: MethodSummary.from_counts(m, c) for m, c in counts.items()})


def _fmt_r(x: float) -> str:
    return f"{x:.1f}".rstrip("0").rstrip(".") if math.isfinite(x) else "nan"


def format_table(summaries: Iterable[EvaluationSummary], label_keys: Sequence[str] = ("gamma_D", "zeta")) -> str:
    """Render summaries in a Table-1-like text layout.

    Methods are column blocks of (R, FDR, TPR); standard deviations are
    printed in parentheses on the line below each row of means.
    """
    summaries = list(summaries)
    if not summaries:
        return ""
    methods = list(summaries[0].methods)
    head = [f"{k:>8}" for k in label_keys] + [f"{m:^26}" for m in methods]
    sub = [" " * 8 for _ in label_keys] + [f"{'R':>8}{'FDR':>9}{'TPR':>9}" for _ in methods]
    lines = ["".join(head), "".join(sub)]
    for s in summaries:
        labels = [f"{s.scenario.get(k, ''):>8}" for k in label_keys]
        means, sds = [], []
        for m in methods:
            ms = s.methods[m]
            means.append(f"{_fmt_r(ms.R_mean):>8}{ms.FDR_mean:>9.3f}{ms.TPR_mean:>9.3f}")
            sds.append(f"{'(' + _fmt_r(ms.R_sd) + ')':>8}{'(' + format(ms.FDR_sd, '.3f') + ')':>9}{'(' + format(ms.TPR_sd, '.3f') + ')':>9}")
        lines.append("".join(labels + means))
        lines.append("".join([" " * 8 for _ in label_keys] + sds))
    return "\n".join(lines) + "\n"
