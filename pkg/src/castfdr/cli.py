"""Command-line entry point: ``adjust``, ``simulate`` and ``thresholds``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .core import CastError, Method, from_arrays
from .correlation import DEFAULT_CLAMP, pearson_group_correlation
from .procedures import run_adjustment, threshold_curve
from .simulation import expand_grid, run_study
from .evaluation import format_table
from .testing import matrix_pvalues

OUTPUT_ROOT_ENV = "CASTFDR_OUTPUT_ROOT"
THREADS_ENV = "CASTFDR_THREADS"

log = logging.getLogger("castfdr")


class UsageError(CastError):
    pass


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in _split(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _alpha(text: str) -> float:
    a = float(text)
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _output_path(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def cmd_adjust(args) -> int:
    method = Method.parse(args.method)
    corr = None
    means = None
    if args.matrix:
        dm = io.read_data_matrix(args.matrix, args.pheno, args.annot)
        if args.input:
            pset = io.read_pvalue_table(args.input)
        else:
            p = matrix_pvalues(dm.values, dm.phenotype, args.test)
            pset = from_arrays(list(dm.features), [dm.groups[f] for f in dm.features], p)
        if method.needs_correlation:
            row = {f: i for i, f in enumerate(dm.features)}
            corr = {}
            for g in pset.group_ids:
                members = [pset.features[i] for i in pset.members(g)]
                absent = [f for f in members if f not in row]
                if absent:
                    raise UsageError(f"features {absent[:5]} have p-values but no rows in the data matrix")
                corr[g] = pearson_group_correlation(g, members, dm.values[[row[f] for f in members]])
    else:
        pset = io.read_pvalue_table(args.input)
        if args.corr:
            ci = io.read_correlations(args.corr)
            if ci.means is not None:
                means = ci.means
            else:
                corr = ci.group_correlations(pset)
    result = run_adjustment(pset, method, args.alpha, correlations=corr, mean_correlations=means, delta=args.delta)
    out = _output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_adjustment(result, out)
    log.info("%s at alpha=%g: %d of %d rejected", method.value, args.alpha, result.n_rejected, pset.M)
    return 0


def cmd_simulate(args) -> int:
    base, axes = io.load_config(args.config)
    if args.replicates is not None:
        base["replicates"] = args.replicates
    if args.seed is not None:
        base["seed"] = args.seed
    grid = expand_grid(base, axes)
    seed = grid[0].seed
    jobs = args.jobs or int(os.environ.get(THREADS_ENV, "1"))
    study = run_study(grid, seed, n_jobs=jobs)
    out = _output_path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    fields = list(grid[0].as_dict())
    fields.remove("methods")
    io.write_table(
        out / "grid.tsv",
        ["grid_point", *fields],
        ([str(i), *(str(sc.as_dict()[f]) for f in fields)] for i, sc in enumerate(grid)),
    )
    rows = []
    for s in study.summaries:
        for m, ms in s.methods.items():
            rows.append([str(s.grid_point), m, ms.replicates, ms.R_mean, ms.R_sd, ms.FDR_mean, ms.FDR_sd, ms.TPR_mean, ms.TPR_sd, ms.any_rejection_rate])
    io.write_table(
        out / "summary.tsv",
        ["grid_point", "method", "replicates", "R_mean", "R_sd", "FDR_mean", "FDR_sd", "TPR_mean", "TPR_sd", "any_rejection"],
        rows,
    )
    raw = []
    for gi, reps in enumerate(study.counts):
        for i, rep in enumerate(reps):
            for m, c in rep.items():
                raw.append([str(gi), str(i), m, c.R, c.V, c.TP, c.M1])
    io.write_table(out / "replicates.tsv", ["grid_point", "replicate", "method", "R", "V", "TP", "M1"], raw)
    labels = [k for k in axes] or ["gamma_D", "zeta"]
    (out / "table.txt").write_text(format_table(study.summaries, labels))
    return 0


def cmd_thresholds(args) -> int:
    methods = [Method.parse(m) for m in _split(args.methods)]
    if args.Mg < 1:
        raise UsageError("--Mg must be at least 1")
    rows = []
    for method in methods:
        for r in args.rbar:
            t = threshold_curve(method, args.Mg, r, args.alpha)
            rows.extend([method.value, r, j, v] for j, v in enumerate(t.tolist(), start=1))
    out = _output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_table(out, ["method", "rbar", "rank", "threshold"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="castfdr", description="Correlation-adjusted grouped FDR procedures.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("adjust", help="adjust grouped p-values and call rejections")
    p.add_argument("--input", help="feature/group/pvalue table")
    p.add_argument("--method", required=True, choices=[m.value for m in Method], type=lambda s: Method.parse(s).value)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--corr", help="pairwise (feature_a, feature_b, r) or mean (feature, rbar) correlation table")
    p.add_argument("--matrix", help="features x subjects data matrix")
    p.add_argument("--pheno", help="subject/phenotype table (case|control)")
    p.add_argument("--annot", help="feature/group annotation table")
    p.add_argument("--test", choices=("pooled", "welch"), default="pooled")
    p.add_argument("--delta", type=float, default=DEFAULT_CLAMP, help="clamp for mean correlations near -1")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a scenario file")
    p.add_argument("--config", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--jobs", type=int, default=0, help=f"worker processes (default: ${THREADS_ENV} or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("thresholds", help="threshold curves t(j) for one group")
    p.add_argument("--Mg", type=int, required=True)
    p.add_argument("--rbar", type=_floats, default=[0.0])
    p.add_argument("--methods", default="GBH,GBY,LCAST,QCAST")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_thresholds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "adjust":
        if args.matrix and not (args.pheno and args.annot):
            parser.error("--matrix requires --pheno and --annot")
        if args.matrix and args.corr:
            parser.error("--corr and --matrix are mutually exclusive")
        if not args.input and not args.matrix:
            parser.error("adjust needs --input or --matrix")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (CastError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"castfdr: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
