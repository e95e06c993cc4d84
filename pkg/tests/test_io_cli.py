import subprocess
import sys

import numpy as np
import pytest

from castfdr import io
from castfdr.cli import main
from castfdr.core import validate
from castfdr.procedures import run_adjustment


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def ptable(tmp_path):
    rows = ["feature\tgroup\tpvalue"]
    rng = np.random.default_rng(0)
    for g in range(4):
        for k in range(5):
            p = rng.random() ** 4
            rows.append(f"cg{g}{k}\tGENE{g}\t{p!r}")
    return write(tmp_path / "p.tsv", "\n".join(rows) + "\n")


def test_read_two_rows_and_whitespace(tmp_path):
    path = write(tmp_path / "p.csv", "feature,group,pvalue\ncg1,A,0.05   \ncg2,B, 0.5\n")
    s = io.read_pvalue_table(path)
    assert s.M == 2 and s.pvalues.tolist() == [0.05, 0.5]


def test_missing_group_column(tmp_path):
    path = write(tmp_path / "p.tsv", "feature\tpvalue\ncg1\t0.1\n")
    with pytest.raises(io.ParseError, match="group"):
        io.read_pvalue_table(path)


def test_bad_number_reports_line(tmp_path):
    path = write(tmp_path / "p.tsv", "feature\tgroup\tpvalue\na\tg\t0.1\nb\tg\tzero\n")
    with pytest.raises(io.ParseError) as exc:
        io.read_pvalue_table(path)
    assert exc.value.line == 3 and exc.value.column == "pvalue"


def test_write_adjustment_layout_and_roundtrip(ptable, tmp_path):
    pset = io.read_pvalue_table(ptable)
    res = run_adjustment(pset, "GBY", 0.05)
    out = tmp_path / "adj.tsv"
    side = io.write_adjustment(res, out)
    rows = io.read_adjustment(out)
    assert [r["feature"] for r in rows] == sorted(res.features, key=lambda f: (res.adjusted_by_feature()[f], f))
    by_f = {r["feature"]: r for r in rows}
    for f, q, rej in zip(res.features, res.adjusted, res.rejected):
        assert by_f[f]["adjusted_p"] == pytest.approx(q, rel=1e-5)
        assert by_f[f]["rejected"] == bool(rej)
    groups = io.read_group_sidecar(side)
    assert [g["group"] for g in groups] == pset.group_ids
    assert all(g["C"] == pytest.approx(2.28333, rel=1e-5) for g in groups)


def test_empty_rejection_file(tmp_path):
    pset = validate([("a", "g", 0.9), ("b", "g", 0.8)])
    out = tmp_path / "adj.tsv"
    io.write_adjustment(run_adjustment(pset, "BH", 0.05), out)
    text = out.read_text().splitlines()
    assert text[0].split("\t") == list(io.ADJUSTMENT_COLUMNS)
    assert all(line.endswith("\tfalse") for line in text[1:])


def test_six_significant_digits():
    assert io.fmt(0.000123456789) == "0.000123457"
    assert io.fmt(1 / 3) == "0.333333"
    assert io.fmt(True) == "true"


def test_cli_adjust_deterministic(ptable, tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert main(["adjust", "--input", str(ptable), "--method", "GBH", "--alpha", "0.05", "--output", str(a)]) == 0
    assert main(["adjust", "--input", str(ptable), "--method", "GBH", "--alpha", "0.05", "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert io.sidecar_path(a).read_bytes() == io.sidecar_path(b).read_bytes()


def test_cli_adjust_with_mean_correlations(ptable, tmp_path):
    pset = io.read_pvalue_table(ptable)
    corr = write(tmp_path / "rbar.tsv", "feature\trbar\n" + "".join(f"{f}\t0\n" for f in pset.features))
    out = tmp_path / "l.tsv"
    assert main(["adjust", "--input", str(ptable), "--method", "LCAST", "--corr", str(corr), "--output", str(out)]) == 0
    got = {r["feature"]: r["adjusted_p"] for r in io.read_adjustment(out)}
    ref = run_adjustment(pset, "LCAST", 0.05, mean_correlations={f: 0.0 for f in pset.features})
    for f, q in ref.adjusted_by_feature().items():
        assert got[f] == pytest.approx(q, rel=1e-5)


def test_cli_adjust_with_pairwise_correlations(ptable, tmp_path):
    corr = write(tmp_path / "pairs.csv", "feature_a,feature_b,r\ncg00,cg01,0.8\ncg10,cg11,-0.4\n")
    out = tmp_path / "q.tsv"
    assert main(["adjust", "--input", str(ptable), "--method", "QCAST", "--corr", str(corr), "--output", str(out)]) == 0
    side = io.read_group_sidecar(io.sidecar_path(out))
    assert all(isinstance(g["C"], list) and len(g["C"]) == 5 for g in side)


def test_missing_correlation_error_line(ptable, tmp_path, capsys):
    code = main(["adjust", "--input", str(ptable), "--method", "LCAST", "--output", str(tmp_path / "x.tsv")])
    err = capsys.readouterr().err
    assert code == 1
    assert err.count("\n") == 1 and err.startswith("castfdr: error: MissingCorrelation:")


def test_exit_status_subprocess(tmp_path):
    bad = write(tmp_path / "bad.tsv", "feature\tgroup\tpvalue\na\tg\t1.5\n")
    proc = subprocess.run(
        [sys.executable, "-m", "castfdr.cli", "adjust", "--input", str(bad), "--method", "BH", "--output", str(tmp_path / "o.tsv")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    assert "PValueOutOfRange" in proc.stderr


@pytest.fixture
def matrix_files(tmp_path):
    rng = np.random.default_rng(3)
    subjects = [f"s{i}" for i in range(8)]
    x = rng.normal(size=(4, 8))
    x[0, :4] += 3
    lines = ["feature\t" + "\t".join(subjects)]
    for k, row in enumerate(x):
        lines.append(f"cg{k}\t" + "\t".join(repr(float(v)) for v in row))
    m = write(tmp_path / "m.tsv", "\n".join(lines) + "\n")
    ph = write(tmp_path / "ph.tsv", "subject\tphenotype\n" + "".join(f"s{i}\t{'case' if i < 4 else 'control'}\n" for i in range(8)))
    an = write(tmp_path / "an.tsv", "feature\tgroup\ncg0\tA\ncg1\tA\ncg2\tB\ncg3\tB\n")
    return m, ph, an, x


def test_read_data_matrix(matrix_files):
    m, ph, an, x = matrix_files
    dm = io.read_data_matrix(m, ph, an)
    assert dm.values.shape == (4, 8) and np.array_equal(dm.values, x)
    assert dm.phenotype.n_cases == 4
    assert dm.groups == {"cg0": "A", "cg1": "A", "cg2": "B", "cg3": "B"}


def test_subject_mismatch(matrix_files, tmp_path):
    m, _, an, _ = matrix_files
    ph = write(tmp_path / "ph2.tsv", "subject\tphenotype\ns0\tcase\n")
    with pytest.raises(io.SubjectMismatch):
        io.read_data_matrix(m, ph, an)


def test_unannotated_feature_becomes_singleton(matrix_files, tmp_path):
    m, ph, _, _ = matrix_files
    an = write(tmp_path / "an2.tsv", "feature\tgroup\ncg0\tA\ncg1\tA\ncg2\tB\n")
    with pytest.warns(io.UnannotatedFeature):
        dm = io.read_data_matrix(m, ph, an)
    assert dm.groups["cg3"] == "cg3"


def test_cli_adjust_from_matrix(matrix_files, tmp_path):
    m, ph, an, _ = matrix_files
    out = tmp_path / "mat.tsv"
    assert main(["adjust", "--matrix", str(m), "--pheno", str(ph), "--annot", str(an), "--method", "LCAST", "--output", str(out)]) == 0
    rows = io.read_adjustment(out)
    assert len(rows) == 4


def test_cli_thresholds(tmp_path):
    out = tmp_path / "t.tsv"
    assert main(["thresholds", "--Mg", "30", "--rbar=-0.9,0,0.9", "--methods", "GBH,GBY,LCAST,QCAST", "--alpha", "0.05", "--output", str(out)]) == 0
    header, rows = io.read_table(out)
    assert header == ["method", "rbar", "rank", "threshold"]
    assert len(rows) == 4 * 3 * 30
    curve = {}
    for method, r, j, t in rows:
        curve.setdefault((method, float(r)), []).append(float(t))
    assert curve[("LCAST", 0.0)] == curve[("GBY", 0.0)]
    slopes = [curve[("LCAST", r)][0] for r in (-0.9, 0.0, 0.9)]
    assert slopes[0] > slopes[1] > slopes[2]


CONFIG = """
N = 40
G = 6
M = 30
pi1 = 0.1
psi = 0.34
zeta = [0.0, 2.0]
methods = ["GBH", "LCAST"]
"""


def test_cli_simulate_deterministic(tmp_path):
    cfg = write(tmp_path / "sim.toml", CONFIG)
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--config", str(cfg), "--replicates", "3", "--seed", "5", "--output-dir", str(d)]) == 0
    for name in ("grid.tsv", "summary.tsv", "replicates.tsv", "table.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header, rows = io.read_table(a / "summary.tsv")
    assert len(rows) == 2 * 2
    header, rows = io.read_table(a / "replicates.tsv")
    assert len(rows) == 2 * 3 * 2


def test_config_unknown_key(tmp_path, capsys):
    cfg = write(tmp_path / "bad.toml", "N = 40\nkapa = 0.3\n")
    assert main(["simulate", "--config", str(cfg), "--output-dir", str(tmp_path / "o")]) == 1
    assert "unknown key 'kapa'" in capsys.readouterr().err


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CASTFDR_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["thresholds", "--Mg", "3", "--output", "t.tsv"]) == 0
    assert (tmp_path / "root" / "t.tsv").exists()
