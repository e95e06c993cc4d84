"""Shared domain types and input validation for grouped p-value sets."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class CastError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CastError, ValueError):
    """A raw record failed validation.

    ``record`` names the offending feature; ``violations`` carries every
    problem found in the same input, in input order.
    """

    def __init__(self, message: str, record: str | None = None, violations=None):
        super().__init__(message)
        self.record = record
        self.violations = list(violations) if violations is not None else [self]


class EmptyInput(ValidationError):
    pass


class DuplicateFeature(ValidationError):
    pass


class PValueOutOfRange(ValidationError):
    pass


class InvalidIdentifier(ValidationError):
    pass


class Method(str, enum.Enum):
    BONFERRONI = "Bonferroni"
    BH = "BH"
    BY = "BY"
    GBH = "GBH"
    GBY = "GBY"
    LCAST = "LCAST"
    QCAST = "QCAST"

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, Method):
            return value
        key = str(value).strip().lower()
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown method {value!r}; choose from {[m.value for m in cls]}")

    @property
    def grouped(self) -> bool:
        return self in (Method.GBH, Method.GBY, Method.LCAST, Method.QCAST)

    @property
    def needs_correlation(self) -> bool:
        return self in (Method.LCAST, Method.QCAST)


ALL_METHODS = tuple(Method)


@dataclass(frozen=True)
class GroupedPValueSet:
    """Validated features with p-values, partitioned into disjoint groups.

    Instances are immutable; build them with :func:`validate`.
    """

    features: tuple[str, ...]
    groups: tuple[str, ...]
    pvalues: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.pvalues, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "pvalues", p)
        if self._index is None:
            members: dict[str, list[int]] = {}
            for i, g in enumerate(self.groups):
                members.setdefault(g, []).append(i)
            index = {g: np.asarray(ix, dtype=np.intp) for g, ix in sorted(members.items())}
            object.__setattr__(self, "_index", index)

    @property
    def M(self) -> int:
        return len(self.features)

    @property
    def G(self) -> int:
        return len(self._index)

    @property
    def group_ids(self) -> list[str]:
        """Group ids in sorted order."""
        return list(self._index)

    @property
    def group_sizes(self) -> dict[str, int]:
        return {g: len(ix) for g, ix in self._index.items()}

    def members(self, group: str) -> np.ndarray:
        """Positional indices of the features in ``group``."""
        return self._index[group]

    def entries(self) -> list[tuple[str, str, float]]:
        return [(f, g, float(p)) for f, g, p in zip(self.features, self.groups, self.pvalues)]

    def __eq__(self, other):
        if not isinstance(other, GroupedPValueSet):
            return NotImplemented
        return sorted(self.entries()) == sorted(other.entries())

    def __hash__(self):
        return hash(tuple(sorted(self.entries())))


def find_violations(entries: Sequence[tuple[str, str, float]]) -> list[ValidationError]:
    """Return every validation problem in ``entries`` (empty if valid)."""
    if len(entries) == 0:
        return [EmptyInput("no records supplied")]
    problems: list[ValidationError] = []
    seen: set[str] = set()
    for feature, group, p in entries:
        if not isinstance(feature, str) or not feature:
            problems.append(InvalidIdentifier(f"empty feature id (group {group!r})", record=str(feature)))
            continue
        if not isinstance(group, str) or not group:
            problems.append(InvalidIdentifier(f"empty group id for feature {feature!r}", record=feature))
        if feature in seen:
            problems.append(DuplicateFeature(f"duplicate feature {feature!r}", record=feature))
        seen.add(feature)
        try:
            pv = float(p)
        except (TypeError, ValueError):
            pv = math.nan
        if not (0.0 <= pv <= 1.0):
            problems.append(PValueOutOfRange(f"p-value {p!r} of feature {feature!r} outside [0, 1]", record=feature))
    return problems


def validate(entries: Iterable[tuple[str, str, float]]) -> GroupedPValueSet:
    """Validate raw ``(feature, group, p)`` records.

    Raises the first violation found; the exception's ``violations``
    attribute lists all of them.
    """
    entries = list(entries)
    problems = find_violations(entries)
    if problems:
        first = problems[0]
        first.violations = problems
        raise first
    features = tuple(e[0] for e in entries)
    groups = tuple(e[1] for e in entries)
    p = np.fromiter((float(e[2]) for e in entries), dtype=float, count=len(entries))
    return GroupedPValueSet(features, groups, p)


def from_arrays(features: Sequence[str], groups: Sequence[str], pvalues) -> GroupedPValueSet:
    """Fast constructor for trusted array input (validation still runs)."""
    p = np.asarray(pvalues, dtype=float)
    if len(features) == 0:
        raise EmptyInput("no records supplied")
    if len(features) != len(groups) or len(features) != len(p):
        raise ValueError("features, groups and pvalues must have equal length")
    bad = ~((p >= 0.0) & (p <= 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise PValueOutOfRange(f"p-value {p[i]!r} of feature {features[i]!r} outside [0, 1]", record=features[i])
    if len(set(features)) != len(features):
        return validate(zip(features, groups, p))
    if any(not f for f in features) or any(not g for g in groups):
        return validate(zip(features, groups, p))
    return GroupedPValueSet(tuple(features), tuple(groups), p)


@dataclass(frozen=True)
class GroupDiagnostics:
    group: str
    size: int
    pi0: float
    between_factor: float
    # scalar for LCAST/GBY/BY, per-rank array for QCAST, None when unused
    c_factor: float | np.ndarray | None
    fallback_used: bool = False


@dataclass(frozen=True)
class AdjustmentResult:
    """Per-feature decisions of one procedure at one alpha.

    Per-feature arrays are in canonical order: groups sorted by id, then
    ascending p within a group (ties broken by feature id).
    """

    method: Method
    alpha: float
    features: tuple[str, ...]
    groups: tuple[str, ...]
    rank: np.ndarray
    pvalues: np.ndarray
    thresholds: np.ndarray
    adjusted: np.ndarray
    rejected: np.ndarray
    group_diagnostics: tuple[GroupDiagnostics, ...]
    # position of each row in the originating GroupedPValueSet
    source_index: np.ndarray | None = None

    @property
    def n_rejected(self) -> int:
        return int(np.count_nonzero(self.rejected))

    @property
    def rejected_features(self) -> set[str]:
        return {f for f, r in zip(self.features, self.rejected) if r}

    def adjusted_by_feature(self) -> dict[str, float]:
        return dict(zip(self.features, self.adjusted.tolist()))

    def diagnostics_by_group(self) -> dict[str, GroupDiagnostics]:
        return {d.group: d for d in self.group_diagnostics}
