import json
import subprocess
import sys

import numpy as np
import pytest

from hts_recon import io as rio
from hts_recon.cli import main
from hts_recon.errors import ConfigError, NonFiniteInput
from hts_recon.hierarchy import build_summing_matrix, figure1_hierarchy
from hts_recon.simulate import Var1Config, simulate_var1, small_design_coeff, small_design_cov


# ---------------------------------------------------------------------------
# io
# ---------------------------------------------------------------------------

def test_panel_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((5, 3)) * 1e3
    data[0, 0] = 0.1 + 0.2  # needs all 17 digits
    path = rio.write_panel(tmp_path / "p.csv", ["a", "b", "c"], data, comments=["made by test"])
    labels, t_index, back, comments = rio.read_panel(path)
    assert labels == ["a", "b", "c"] and t_index == ["0", "1", "2", "3", "4"]
    assert back.tobytes() == data.tobytes()
    assert comments == ["made by test"]


def test_align_and_covariance_reorder(tmp_path):
    w = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    rio.write_matrix(tmp_path / "w.csv", ["x", "y", "z"], ["x", "y", "z"], w)
    got = rio.read_covariance(tmp_path / "w.csv", ["z", "x", "y"])
    perm = [2, 0, 1]
    assert np.array_equal(got, w[np.ix_(perm, perm)])
    with pytest.raises(ConfigError, match="missing"):
        rio.align_panel(["x", "y"], np.zeros((1, 2)), ["x", "y", "q"])
    with pytest.raises(ConfigError, match="unknown"):
        rio.align_panel(["x", "y", "q"], np.zeros((1, 3)), ["x", "y"])


def test_read_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,a\n0,nan\n")
    with pytest.raises(NonFiniteInput):
        rio.read_panel(p)
    p.write_text("time,a\n0,1\n")
    with pytest.raises(ConfigError, match="'t'"):
        rio.read_panel(p)
    p.write_text("t,a,b\n0,1\n")
    with pytest.raises(ConfigError, match="fields"):
        rio.read_panel(p)


def test_write_atomic_leaves_no_temp_and_keeps_old_on_failure(tmp_path):
    target = tmp_path / "out" / "f.txt"
    rio.write_atomic(target, "first\n")

    with pytest.raises(TypeError):
        rio.write_atomic(target, 123)  # not text: fails mid-write
    assert target.read_text() == "first\n"
    assert [x.name for x in target.parent.iterdir()] == ["f.txt"]


# ---------------------------------------------------------------------------
# CLI fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def fig1_files(tmp_path):
    spec = figure1_hierarchy()
    s = build_summing_matrix(spec)
    (tmp_path / "h.txt").write_text(spec.to_text())
    a = np.zeros((5, 5))
    a[:4, :4] = small_design_coeff()
    a[4, 4] = 0.5
    sig = np.eye(5)
    sig[:4, :4] = small_design_cov(0.5)
    y = simulate_var1(Var1Config(a, sig, 160, seed=11), s).y
    rio.write_panel(tmp_path / "history.csv", s.labels, y)
    return tmp_path, s, y


def run(argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_reconcile_from_history_all_methods(fig1_files):
    d, s, y = fig1_files
    methods = ["bu", "ols", "wls", "mint_sample", "mint_shrink", "emint_u"]
    assert run(["reconcile", "--hierarchy", d / "h.txt", "--history", d / "history.csv",
                "--method", *methods, "--out", d / "r"]) == 0
    for m in methods:
        labels, _, rec, comments = rio.read_panel(d / "r" / f"reconciled_{m}.csv")
        assert labels == list(s.labels)
        assert f"method: {m}" in comments
        top = rec[:, : s.m_star]
        assert np.allclose(top, rec[:, s.m_star:] @ s.c.T, atol=1e-10)
    assert (d / "r" / "models.csv").exists()
    man = json.loads((d / "r" / "manifest.json").read_text())
    assert set(man["outputs"]) >= {"reconciled_bu.csv", "G_bu.csv", "models.csv"}

    # bottom-up copies the bottom rows of the base forecasts
    base_labels, _, base, _ = rio.read_panel(d / "r" / "reconciled_bu.csv")
    _, _, g, _ = rio.read_matrix(d / "r" / "G_bu.csv")
    assert np.array_equal(g, np.hstack([np.zeros((s.n, s.m_star)), np.eye(s.n)]))


def test_reconcile_bu_with_base_file(fig1_files):
    d, s, y = fig1_files
    rio.write_panel(d / "base.csv", list(reversed(s.labels)), y[-3:, ::-1])  # column order should not matter
    assert run(["reconcile", "--hierarchy", d / "h.txt", "--base", d / "base.csv", "--method", "bu",
                "--out", d / "r"]) == 0
    _, _, rec, _ = rio.read_panel(d / "r" / "reconciled_bu.csv")
    assert np.array_equal(rec[:, s.m_star:], y[-3:, s.m_star:])


def test_reconcile_missing_input_names_flag(fig1_files, capsys):
    d, s, y = fig1_files
    rio.write_panel(d / "base.csv", s.labels, y[-1:])
    code = run(["reconcile", "--hierarchy", d / "h.txt", "--base", d / "base.csv",
                "--method", "mint_shrink", "--out", d / "r"])
    assert code == 2
    assert "--residuals" in capsys.readouterr().err
    code = run(["reconcile", "--hierarchy", d / "h.txt", "--base", d / "base.csv", "--method", "gls",
                "--out", d / "r"])
    assert code == 2 and "--cov-file" in capsys.readouterr().err
    assert not (d / "r").exists()


def test_reconcile_gls_cov_file(fig1_files):
    d, s, y = fig1_files
    rio.write_panel(d / "base.csv", s.labels, y[-1:])
    rio.write_matrix(d / "cov.csv", s.labels, s.labels, np.eye(s.m))
    assert run(["reconcile", "--hierarchy", d / "h.txt", "--base", d / "base.csv", "--cov-file", d / "cov.csv",
                "--method", "gls", "ols", "--out", d / "r"]) == 0
    a = rio.read_panel(d / "r" / "reconciled_gls.csv")[2]
    b = rio.read_panel(d / "r" / "reconciled_ols.csv")[2]
    assert np.allclose(a, b, atol=1e-10)


def test_exit_codes(tmp_path, capsys):
    assert run(["simulate", "--reps", 0, "--seed", 1, "--out", tmp_path / "x"]) == 2
    assert run(["simulate", "--reps", 1, "--out", tmp_path / "x"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["reconcile", "--method", "nope", "--hierarchy", "h", "--out", "o"])
    assert exc.value.code == 2
    assert run(["reconcile", "--hierarchy", tmp_path / "missing.txt", "--method", "ols", "--out", tmp_path]) == 3
    assert run(["verify", "--seed", 1, "--instances", 0]) == 2


def test_simulate_deterministic_and_evaluate_roundtrip(tmp_path, capsys):
    argv = ["simulate", "--design", "small", "--rho", 0.0, 0.8, "--t", 101, "--reps", 4, "--seed", 5]
    assert run([*argv, "--out", tmp_path / "a"]) == 0
    assert run([*argv, "--threads", 2, "--out", tmp_path / "b"]) == 0
    for name in ("mc_results.csv", "report.csv", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man_a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    man_b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    man_a.pop("created"), man_b.pop("created")
    assert man_a == man_b and man_a["completed"] == {"rho=0.0|T=101": 4, "rho=0.8|T=101": 4}

    assert run(["evaluate", "--results", tmp_path / "a" / "mc_results.csv", "--out", tmp_path / "e"]) == 0
    assert (tmp_path / "e" / "report.csv").read_bytes() == (tmp_path / "a" / "report.csv").read_bytes()


def test_simulate_design_file_and_flag_override(tmp_path, capsys):
    (tmp_path / "d.toml").write_text('design = "small"\nreplications = 2\nseed = 3\nrho = [0.5]\nt = [101]\n')
    assert run(["simulate", "--design-file", tmp_path / "d.toml", "--reps", 3, "--out", tmp_path / "o"]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["replications"] == 3 and man["config"]["rho"] == [0.5]
    (tmp_path / "bad.toml").write_text('replications = "two"\n')
    assert run(["simulate", "--design-file", tmp_path / "bad.toml", "--seed", 1, "--out", tmp_path / "o2"]) == 2
    (tmp_path / "bad2.toml").write_text('colour = 1\n')
    assert run(["simulate", "--design-file", tmp_path / "bad2.toml", "--out", tmp_path / "o3"]) == 2


def test_simulate_large_design_table(tmp_path, capsys):
    assert run(["simulate", "--design", "large", "--correlation", "mixed", "--t", 101, "--reps", 2,
                "--seed", 8, "--out", tmp_path]) == 0
    text = (tmp_path / "report.txt").read_text()
    header = [ln for ln in text.splitlines() if "Overall" in ln][0].split()
    assert header == ["Top", "Level", "1", "Bottom", "Overall"]


def test_evaluate_forecast_files(fig1_files, capsys):
    d, s, y = fig1_files
    rio.write_panel(d / "act.csv", s.labels, y[-4:])
    rio.write_panel(d / "f1.csv", s.labels, y[-4:] + 1.0)
    rio.write_panel(d / "f2.csv", s.labels, y[-4:] + 2.0)
    assert run(["evaluate", "--hierarchy", d / "h.txt", "--actuals", d / "act.csv",
                "--forecast", f"one={d / 'f1.csv'}", "--forecast", f"two={d / 'f2.csv'}", "--out", d / "e"]) == 0
    header, rows, _ = rio.read_rows(d / "e" / "report.csv")
    overall = {r[2]: (float(r[5]), float(r[6])) for r in rows if r[3] == "overall"}
    assert overall == {"one": (1.0, 0.0), "two": (4.0, 300.0)}
    assert run(["evaluate", "--hierarchy", d / "h.txt", "--out", d / "e2"]) == 2


def test_verify_exit_codes(tmp_path, capsys):
    assert run(["verify", "--seed", 2, "--instances", 5, "--remark2-reps", 3, "--out", tmp_path]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 7 and "all checks passed" in out
    assert (tmp_path / "verify_report.txt").read_text() == out
    assert run(["verify", "--seed", 2, "--instances", 5, "--remark2-reps", 3, "--break-tolerance", 0]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hts_recon", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
