"""Per-feature two-sample t-tests between cases and controls."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .core import CastError

VARIANTS = ("pooled", "welch")


class DegenerateSamples(UserWarning):
    """Both samples are constant; the p-value was set by convention."""


class InsufficientSamples(CastError, ValueError):
    pass


class RowError(CastError, ValueError):
    """A matrix row could not be tested; ``row`` holds its index."""

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class PhenotypeVector:
    """Case/control labels, one per subject (``True`` marks a case)."""

    is_case: np.ndarray
    subjects: tuple[str, ...] | None = None

    def __post_init__(self):
        lab = np.asarray(self.is_case, dtype=bool)
        lab.setflags(write=False)
        object.__setattr__(self, "is_case", lab)
        if self.subjects is not None:
            if len(self.subjects) != lab.size:
                raise ValueError("subjects and labels differ in length")
            object.__setattr__(self, "subjects", tuple(self.subjects))

    @classmethod
    def from_labels(cls, labels: Sequence[str], subjects: Sequence[str] | None = None) -> "PhenotypeVector":
        flags = []
        for lab in labels:
            key = str(lab).strip().lower()
            if key not in ("case", "control"):
                raise ValueError(f"phenotype label must be 'case' or 'control', got {lab!r}")
            flags.append(key == "case")
        return cls(np.array(flags, dtype=bool), subjects)

    @property
    def N(self) -> int:
        return int(self.is_case.size)

    @property
    def n_cases(self) -> int:
        return int(np.count_nonzero(self.is_case))

    @property
    def n_controls(self) -> int:
        return self.N - self.n_cases

    @property
    def case_fraction(self) -> float:
        return self.n_cases / self.N

    def swapped(self) -> "PhenotypeVector":
        return PhenotypeVector(~self.is_case, self.subjects)


def _t_pvalues(t: np.ndarray, df: np.ndarray) -> np.ndarray:
    # two-sided tail: I_{df/(df+t^2)}(df/2, 1/2)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = df / (df + t * t)
    p = special.betainc(df / 2.0, 0.5, x)
    p = np.where(np.isinf(t), 0.0, p)
    return np.clip(p, 0.0, 1.0)


def _row_stats(x: np.ndarray):
    n = x.shape[1]
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    ss = np.einsum("ij,ij->i", centered, centered)
    return n, mean, ss


def _pvalues(cases: np.ndarray, controls: np.ndarray, variant: str):
    """Vectorised test over rows; returns (p, degenerate_equal, degenerate_unequal)."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    n1, m1, ss1 = _row_stats(cases)
    n0, m0, ss0 = _row_stats(controls)
    if n1 < 2 or n0 < 2:
        raise InsufficientSamples(f"each sample needs >= 2 observations (cases={n1}, controls={n0})")
    diff = m1 - m0
    scale = np.maximum(np.abs(m1), np.abs(m0))
    # relative cut-off for "constant": rounding noise in ss is ~ n * eps^2 * scale^2
    tiny = (1e-12 * np.maximum(scale, 1e-300)) ** 2 * (n1 + n0)
    const1 = ss1 <= tiny
    const0 = ss0 <= tiny
    if variant == "pooled":
        df = np.full(diff.shape, float(n1 + n0 - 2))
        var = (ss1 + ss0) / df * (1.0 / n1 + 1.0 / n0)
    else:
        v1 = ss1 / (n1 - 1) / n1
        v0 = ss0 / (n0 - 1) / n0
        var = v1 + v0
        with np.errstate(divide="ignore", invalid="ignore"):
            df = var * var / (v1 * v1 / (n1 - 1) + v0 * v0 / (n0 - 1))
    both_const = const1 & const0
    safe_var = np.where(both_const, 1.0, var)
    t = diff / np.sqrt(safe_var)
    df = np.where(both_const, 1.0, df)
    p = _t_pvalues(t, df)
    equal = both_const & (np.abs(diff) <= 1e-12 * np.maximum(scale, 1e-300))
    unequal = both_const & ~equal
    p = np.where(equal, 1.0, p)
    p = np.where(unequal, 0.0, p)
    return p, equal, unequal


def two_sample_pvalue(cases, controls, variant: str = "pooled") -> float:
    """Two-sided two-sample t-test p-value.

    ``pooled`` uses the equal-variance statistic with ``N - 2`` degrees of
    freedom; ``welch`` uses the Satterthwaite approximation. When both
    samples are constant the p-value is 1 if they coincide and 0
    otherwise (a :class:`DegenerateSamples` warning is issued either way).
    """
    a = np.asarray(cases, dtype=float)[None, :]
    b = np.asarray(controls, dtype=float)[None, :]
    p, equal, unequal = _pvalues(a, b, variant)
    if equal[0] or unequal[0]:
        what = "equal" if equal[0] else "unequal"
        warnings.warn(f"both samples constant and {what}; p set to {p[0]:g}", DegenerateSamples, stacklevel=2)
    return float(p[0])


def matrix_pvalues(data, phenotype: PhenotypeVector, variant: str = "pooled") -> np.ndarray:
    """Row-wise two-sample p-values for a features x subjects matrix."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be a 2-d features x subjects matrix")
    if x.shape[1] != phenotype.N:
        raise ValueError(f"matrix has {x.shape[1]} columns but phenotype has {phenotype.N} subjects")
    bad = ~np.isfinite(x).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise RowError(f"row {row} contains non-finite values", row)
    p, equal, unequal = _pvalues(x[:, phenotype.is_case], x[:, ~phenotype.is_case], variant)
    n_deg = int(np.count_nonzero(equal | unequal))
    if n_deg:
        rows = np.flatnonzero(equal | unequal)[:5].tolist()
        warnings.warn(f"{n_deg} rows with both samples constant (first rows {rows})", DegenerateSamples, stacklevel=2)
    return p
