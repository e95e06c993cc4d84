"""Exit criteria: one test per criterion, each printing a PASS/FAIL line."""

import resource
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from scipy import stats

from castfdr.cli import main
from castfdr.core import validate
from castfdr.io import read_table
from castfdr.procedures import (
    adjusted_pvalues,
    harmonic_factor,
    lcast_factor,
    qcast_factors,
    run_adjustment,
    step_up,
)
from castfdr.simulation import SimulationScenario, replicate_rng, run_replicate, run_study

SEED = 20240101
ALPHA = 0.05
TABLE1 = dict(M=1250, G=100, N=300, gamma_D=0.5, zeta=1.1, sigma=1.0, pi1=0.01, psi=0.05, kappa=0.5, tau=0.5, upsilon=0.5, alpha=ALPHA, replicates=100)


def _study(**changes):
    sc = SimulationScenario(**{**TABLE1, **changes})
    return run_study([sc], SEED).summaries[0]


def _fmt(s):
    return " ".join(f"{m}:R={v.R_mean:.2f},FDR={v.FDR_mean:.3f},TPR={v.TPR_mean:.3f}" for m, v in s.methods.items())


@pytest.mark.slow
def test_c01_table1_coupled(criterion):
    s = _study()
    ok = (
        s["LCAST"].FDR_mean <= 0.05
        and s["QCAST"].FDR_mean <= 0.05
        and s["LCAST"].TPR_mean >= 0.95
        and s["QCAST"].TPR_mean >= 0.95
        and s["GBH"].FDR_mean >= 0.15
        and s["GBY"].FDR_mean >= 0.08
    )
    assert criterion(ok, _fmt(s))


@pytest.mark.slow
def test_c02_table1_block_diagonal(criterion):
    s = _study(upsilon=0.0)
    ok = (
        s["LCAST"].FDR_mean <= 0.05
        and s["QCAST"].FDR_mean <= 0.05
        and s["GBH"].FDR_mean >= 0.15
        and s["GBY"].FDR_mean >= 0.07
        and s["LCAST"].TPR_mean >= 0.95
        and s["QCAST"].TPR_mean >= 0.95
        and 11 <= s["LCAST"].R_mean <= 13
    )
    assert criterion(ok, _fmt(s))


@pytest.mark.slow
def test_c03_weak_signal_ordering(criterion):
    s = _study(zeta=0.7, gamma_D=0.25)
    ok = s["LCAST"].TPR_mean > s["QCAST"].TPR_mean and s["LCAST"].FDR_mean <= 0.05 and s["QCAST"].FDR_mean <= 0.05
    assert criterion(ok, _fmt(s))


def test_c04_remark1_reduction_to_by(criterion):
    rng = np.random.default_rng(SEED)
    worst, same = 0.0, True
    for trial in range(200):
        m = int(rng.integers(1, 200))
        p = rng.random(m) ** rng.uniform(1, 6)
        pset = validate([(f"f{i:03d}", "all", float(x)) for i, x in enumerate(p)])
        by = run_adjustment(pset, "BY", ALPHA)
        lc = run_adjustment(pset, "LCAST", ALPHA, mean_correlations={f: 0.0 for f in pset.features})
        worst = max(worst, float(np.max(np.abs(by.adjusted - lc.adjusted))))
        same &= by.rejected_features == lc.rejected_features
    assert criterion(same and worst <= 1e-12, f"200 vectors, max |q_LCAST - q_BY| = {worst:.3g}, rejection sets identical={same}")


def test_c05_singleton_groups(criterion):
    rng = np.random.default_rng(SEED + 5)
    bad = 0
    for trial in range(1000):
        M = int(rng.integers(1, 80))
        p = np.where(rng.random(M) < 0.3, rng.random(M) * 2 * ALPHA / M, rng.random(M))
        pset = validate([(f"f{i}", f"g{i}", float(x)) for i, x in enumerate(p)])
        bonf = {f"f{i}" for i in range(M) if p[i] <= ALPHA / M}
        raw = {f"f{i}" for i in range(M) if p[i] <= ALPHA}
        for method, want in (("LCAST", bonf), ("QCAST", bonf), ("GBH", raw), ("GBY", raw)):
            if run_adjustment(pset, method, ALPHA).rejected_features != want:
                bad += 1
    assert criterion(bad == 0, f"1000 random all-singleton vectors, mismatches={bad}")


def test_c06_factor_identities(criterion):
    problems = []
    grid = [-0.99, -0.5, 0.0, 0.5, 0.99]
    for m in range(1, 51):
        if lcast_factor(np.zeros(m)) != harmonic_factor(m):
            problems.append(f"lcast(0)!=H at {m}")
        if m >= 5 and abs(harmonic_factor(m) - (np.log(m) + 1 / (2 * m) + 0.5772156649)) >= 0.05:
            problems.append(f"asymptotic at {m}")
        lc = [lcast_factor(np.full(m, r)) for r in grid]
        qc = [qcast_factors(np.full(m, r)) for r in grid]
        if any(b < a for a, b in zip(lc, lc[1:])):
            problems.append(f"lcast not monotone at {m}")
        if any(np.any(b < a) for a, b in zip(qc, qc[1:])):
            problems.append(f"qcast not monotone at {m}")
    assert criterion(not problems, "M_g=1..50 " + ("all identities hold" if not problems else "; ".join(problems[:5])))


def test_c07_step_up_oracle(criterion):
    rng = np.random.default_rng(SEED + 7)
    mism = dual = 0
    for _ in range(10_000):
        m = int(rng.integers(1, 13))
        p = np.sort(rng.random(m) ** rng.uniform(1, 4))
        t = rng.random(m) * rng.uniform(0.01, 1.5)
        t[t == 0] = 1e-12
        brute = max((j for j in range(1, m + 1) if p[j - 1] <= t[j - 1]), default=0)
        mism += step_up(p, t) != brute
        s = rng.uniform(0.001, 2.0, size=m)
        q = adjusted_pvalues(p, s)
        inv = 1.0 / s
        for a in (0.01, 0.05, 0.1, 0.2):
            r = step_up(p * inv, a)
            dual += set(np.flatnonzero(q <= a).tolist()) != set(range(r))
    assert criterion(mism == 0 and dual == 0, f"10000 instances: step-up mismatches={mism}, duality failures={dual}")


@pytest.mark.slow
def test_c08_null_calibration(criterion):
    sc = SimulationScenario(**{**TABLE1, "zeta": 0.0, "pi1": 0.0, "methods": ("BH", "BY", "Bonferroni", "GBH", "GBY", "LCAST", "QCAST"), "replicates": 200})
    pooled, per_rep = [], []
    for i in range(sc.replicates):
        rep = run_replicate(sc, replicate_rng(SEED, 8, i), keep=True)
        pooled.append(rep.pvalues)
        per_rep.append(rep.counts)
        del rep
    ok = True
    parts = []
    for m in sc.methods:
        counts = [c[m] for c in per_rep]
        fdr = float(np.mean([c.fdp for c in counts]))
        anyrej = float(np.mean([c.R > 0 for c in counts]))
        tpr = float(np.mean([c.tpp for c in counts]))
        ok &= fdr == anyrej and tpr == 0.0
        if m in ("LCAST", "QCAST"):
            ok &= anyrej <= 0.10
        parts.append(f"{m}:FDR={fdr:.3f},P(R>0)={anyrej:.3f}")
    ks = stats.kstest(np.concatenate(pooled), "uniform").statistic
    ok &= ks < 0.05
    assert criterion(ok, " ".join(parts) + f" KS={ks:.4f}")


def test_c09_threshold_curve_ordering(criterion, tmp_path):
    out = tmp_path / "thr.tsv"
    assert main(["thresholds", "--Mg", "30", "--rbar=-0.9,0,0.9", "--methods", "GBH,GBY,LCAST,QCAST", "--alpha", "0.05", "--output", str(out)]) == 0
    _, rows = read_table(out)
    curve = {}
    for method, r, j, t in rows:
        curve.setdefault((method, float(r)), []).append(float(t))
    violations = []
    for r in (-0.9, 0.0, 0.9):
        lc = np.array(curve[("LCAST", r)])
        for ref in ("GBH", "GBY"):
            above = np.flatnonzero(lc > np.array(curve[(ref, r)]))
            if above.size:
                violations.append(f"LCAST above {ref} at rbar={r} for {above.size}/30 ranks")
        if r >= 0 and not curve[("QCAST", r)][0] < curve[("GBY", r)][0]:
            violations.append(f"QCAST not below GBY at rank 1, rbar={r}")
    assert criterion(not violations, "; ".join(violations) or "all orderings hold")


@pytest.mark.slow
def test_c10_scale_smoke(criterion):
    code = textwrap.dedent(
        """
        import json, resource
        from castfdr.simulation import SimulationScenario, replicate_rng, run_replicate
        sc = SimulationScenario(M=120000, G=9600, upsilon=0.5, coupling="bounded", replicates=1,
                                methods=("GBH", "GBY", "LCAST", "QCAST"))
        counts = run_replicate(sc, replicate_rng(%d, 10, 0))
        print(json.dumps({m: [c.R, c.V, c.TP, c.M1] for m, c in counts.items()}))
        print(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)
        """
        % SEED
    )
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, timeout=1800)
    lines = proc.stdout.strip().splitlines()
    ok = proc.returncode == 0 and len(lines) == 2
    detail = proc.stderr.strip().splitlines()[-1] if not ok and proc.stderr else ""
    if ok:
        import json

        counts = json.loads(lines[0])
        rss_gb = int(lines[1]) / 1024**2
        well_formed = all(R == V + TP and 0 <= TP <= M1 == 1200 and R <= 120000 for R, V, TP, M1 in counts.values())
        ok = well_formed and rss_gb < 8.0
        detail = f"peak RSS {rss_gb:.2f} GB, counts {counts}"
    assert criterion(ok, detail)
