"""Delimited-table readers and writers, and the simulation config format."""

from __future__ import annotations

import csv
import math
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AdjustmentResult, CastError, GroupedPValueSet, validate
from .correlation import GroupCorrelation
from .testing import PhenotypeVector

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ParseError(CastError, ValueError):
    def __init__(self, message: str, path: str | os.PathLike | None = None, line: int | None = None, column: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
        self.column = column


class SubjectMismatch(CastError, ValueError):
    pass


class UnannotatedFeature(UserWarning):
    """A feature had no group annotation and was placed in its own group."""


class ConfigError(CastError, ValueError):
    pass


def fmt(x: float) -> str:
    """Six significant digits, locale independent."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".6g")


def _sniff_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ParseError("file is empty", path)
    delim = _sniff_delimiter(body[0][1])
    reader = csv.reader([ln for _, ln in body], delimiter=delim)
    parsed = [[c.strip() for c in row] for row in reader]
    header = parsed[0]
    rows = [(lineno, row) for (lineno, _), row in zip(body[1:], parsed[1:])]
    return header, rows


def _columns(header: Sequence[str], required: Iterable[str], path) -> dict[str, int]:
    lower = [h.lower() for h in header]
    out = {}
    for name in required:
        if name not in lower:
            raise ParseError(f"missing column '{name}' (found {list(header)})", path, 1, name)
        out[name] = lower.index(name)
    return out


def _float(text: str, path, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column '{column}': cannot parse {text!r} as a number", path, line, column) from None


def read_pvalue_table(path) -> GroupedPValueSet:
    """Read a ``feature``/``group``/``pvalue`` table (tab or comma separated)."""
    header, rows = _read_rows(path)
    cols = _columns(header, ("feature", "group", "pvalue"), path)
    entries = []
    for line, row in rows:
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
        entries.append((row[cols["feature"]], row[cols["group"]], _float(row[cols["pvalue"]], path, line, "pvalue")))
    return validate(entries)


def write_pvalue_table(pset: GroupedPValueSet, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("feature\tgroup\tpvalue\n")
        for f, g, p in pset.entries():
            fh.write(f"{f}\t{g}\t{p!r}\n")


@dataclass(frozen=True)
class CorrelationInput:
    """Either pairwise correlations or per-feature mean correlations."""

    pairs: dict[tuple[str, str], float] | None = None
    means: dict[str, float] | None = None

    def group_correlations(self, pset: GroupedPValueSet) -> dict[str, GroupCorrelation]:
        """Assemble per-group matrices; unlisted pairs are 0."""
        if self.pairs is None:
            return {}
        out = {}
        feats = np.asarray(pset.features)
        for g in pset.group_ids:
            order = tuple(feats[pset.members(g)].tolist())
            pos = {f: i for i, f in enumerate(order)}
            r = np.eye(len(order))
            for (a, b), v in self.pairs.items():
                if a in pos and b in pos and a != b:
                    r[pos[a], pos[b]] = r[pos[b], pos[a]] = v
            out[g] = GroupCorrelation(g, order, r)
        return out


def read_correlations(path) -> CorrelationInput:
    """Read ``feature_a``/``feature_b``/``r`` pairs or ``feature``/``rbar`` means."""
    header, rows = _read_rows(path)
    lower = [h.lower() for h in header]
    if "rbar" in lower:
        cols = _columns(header, ("feature", "rbar"), path)
        means = {}
        for line, row in rows:
            v = _float(row[cols["rbar"]], path, line, "rbar")
            if not -1.0 <= v <= 1.0:
                raise ParseError(f"mean correlation {v} outside [-1, 1]", path, line, "rbar")
            means[row[cols["feature"]]] = v
        return CorrelationInput(means=means)
    cols = _columns(header, ("feature_a", "feature_b", "r"), path)
    pairs = {}
    for line, row in rows:
        v = _float(row[cols["r"]], path, line, "r")
        if not -1.0 <= v <= 1.0:
            raise ParseError(f"correlation {v} outside [-1, 1]", path, line, "r")
        a, b = row[cols["feature_a"]], row[cols["feature_b"]]
        key = (a, b) if a <= b else (b, a)
        pairs[key] = v
    return CorrelationInput(pairs=pairs)


@dataclass(frozen=True)
class DataMatrix:
    features: tuple[str, ...]
    values: np.ndarray  # features x subjects
    phenotype: PhenotypeVector
    groups: dict[str, str]


def read_data_matrix(matrix_path, phenotype_path, annotation_path) -> DataMatrix:
    """Read a features x subjects matrix with its phenotype and group annotation.

    The matrix header is ``feature`` followed by subject ids. The phenotype
    file has ``subject`` and ``phenotype`` (``case``/``control``) columns;
    the annotation file has ``feature`` and ``group`` columns. Features
    without an annotation become singleton groups named after themselves.
    """
    header, rows = _read_rows(matrix_path)
    if len(header) < 2:
        raise ParseError("matrix needs a feature column and at least one subject", matrix_path, 1)
    subjects = header[1:]
    if len(set(subjects)) != len(subjects):
        raise ParseError("duplicate subject ids in matrix header", matrix_path, 1)
    feats, values = [], []
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", matrix_path, line)
        feats.append(row[0])
        values.append([_float(v, matrix_path, line, subjects[k]) for k, v in enumerate(row[1:])])
    if len(set(feats)) != len(feats):
        raise ParseError("duplicate feature ids in matrix", matrix_path)

    ph_header, ph_rows = _read_rows(phenotype_path)
    cols = _columns(ph_header, ("subject", "phenotype"), phenotype_path)
    labels = {row[cols["subject"]]: row[cols["phenotype"]] for _, row in ph_rows}
    missing = [s for s in subjects if s not in labels]
    if missing:
        raise SubjectMismatch(f"subjects missing from phenotype file: {missing[:5]}")
    try:
        pheno = PhenotypeVector.from_labels([labels[s] for s in subjects], subjects)
    except ValueError as exc:
        raise ParseError(str(exc), phenotype_path) from None

    an_header, an_rows = _read_rows(annotation_path)
    cols = _columns(an_header, ("feature", "group"), annotation_path)
    annot = {row[cols["feature"]]: row[cols["group"]] for _, row in an_rows}
    groups = {}
    lonely = []
    for f in feats:
        g = annot.get(f)
        if not g:
            lonely.append(f)
            g = f
        groups[f] = g
    if lonely:
        warnings.warn(f"{len(lonely)} features without annotation placed in singleton groups: {lonely[:5]}", UnannotatedFeature, stacklevel=2)
    return DataMatrix(tuple(feats), np.array(values, dtype=float).reshape(len(feats), len(subjects)), pheno, groups)


ADJUSTMENT_COLUMNS = ("feature", "group", "rank", "p", "adjusted_p", "rejected")
GROUP_COLUMNS = ("group", "M_g", "pi0", "A_B", "C", "fallback_used")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".groups" + (path.suffix or ".tsv"))


def _c_text(c) -> str:
    if c is None:
        return "NA"
    if np.ndim(c) == 0:
        return fmt(c)
    return ";".join(fmt(v) for v in np.asarray(c))


def write_adjustment(result: AdjustmentResult, path) -> Path:
    """Write per-feature decisions plus a per-group sidecar; returns the sidecar path.

    Rows are sorted by adjusted p-value, then feature id.
    """
    path = Path(path)
    order = sorted(range(len(result.features)), key=lambda i: (result.adjusted[i], result.features[i]))
    with path.open("w", newline="") as fh:
        fh.write("\t".join(ADJUSTMENT_COLUMNS) + "\n")
        for i in order:
            fields = (
                result.features[i],
                result.groups[i],
                str(int(result.rank[i])),
                fmt(result.pvalues[i]),
                fmt(result.adjusted[i]),
                "true" if result.rejected[i] else "false",
            )
            fh.write("\t".join(fields) + "\n")
    side = sidecar_path(path)
    with side.open("w", newline="") as fh:
        fh.write("\t".join(GROUP_COLUMNS) + "\n")
        for d in result.group_diagnostics:
            fh.write("\t".join((d.group, str(d.size), fmt(d.pi0), fmt(d.between_factor), _c_text(d.c_factor), "true" if d.fallback_used else "false")) + "\n")
    return side


def _bool(text: str, path, line: int, column: str) -> bool:
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    raise ParseError(f"column '{column}': expected true/false, got {text!r}", path, line, column)


def read_adjustment(path) -> list[dict]:
    """Parse a file produced by :func:`write_adjustment`."""
    header, rows = _read_rows(path)
    cols = _columns(header, ADJUSTMENT_COLUMNS, path)
    out = []
    for line, row in rows:
        out.append(
            {
                "feature": row[cols["feature"]],
                "group": row[cols["group"]],
                "rank": int(_float(row[cols["rank"]], path, line, "rank")),
                "p": _float(row[cols["p"]], path, line, "p"),
                "adjusted_p": _float(row[cols["adjusted_p"]], path, line, "adjusted_p"),
                "rejected": _bool(row[cols["rejected"]], path, line, "rejected"),
            }
        )
    return out


def read_group_sidecar(path) -> list[dict]:
    header, rows = _read_rows(path)
    cols = _columns(header, [c.lower() for c in GROUP_COLUMNS], path)
    out = []
    for line, row in rows:
        c = row[cols["c"]]
        if c == "NA":
            cval = None
        elif ";" in c:
            cval = [_float(v, path, line, "C") for v in c.split(";")]
        else:
            cval = _float(c, path, line, "C")
        out.append(
            {
                "group": row[cols["group"]],
                "M_g": int(_float(row[cols["m_g"]], path, line, "M_g")),
                "pi0": _float(row[cols["pi0"]], path, line, "pi0"),
                "A_B": _float(row[cols["a_b"]], path, line, "A_B"),
                "C": cval,
                "fallback_used": _bool(row[cols["fallback_used"]], path, line, "fallback_used"),
            }
        )
    return out


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Tab-separated table with :func:`fmt` applied to numbers."""
    with Path(path).open("w", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    header, rows = _read_rows(path)
    return header, [row for _, row in rows]


def load_config(path) -> tuple[dict, dict]:
    """Read a flat TOML scenario file.

    Keys must be :class:`~castfdr.simulation.SimulationScenario` field
    names. A list value (other than ``methods``) makes that key a grid
    axis. Returns ``(base settings, grid axes)``.
    """
    from .simulation import SCENARIO_FIELDS

    try:
        with Path(path).open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base, axes = {}, {}
    for key, value in raw.items():
        if key not in SCENARIO_FIELDS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} must be a scalar or a list (tables are not allowed)")
        if key == "methods":
            base[key] = tuple(value) if isinstance(value, list) else (value,)
        elif isinstance(value, list):
            if not value:
                raise ConfigError(f"{path}: grid axis {key!r} is empty")
            axes[key] = value
        else:
            base[key] = value
    return base, axes
