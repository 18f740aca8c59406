import numpy as np
import pytest
from _oracles import mse_loop
from hypothesis import given
from hypothesis import strategies as st

from hts_recon.errors import DimensionMismatch, EmptyInput, NotPositiveDefinite, SingularGram, ZeroReference
from hts_recon.evaluate import (
    build_report,
    check_gls_mint_equivalence,
    check_ols_distance,
    check_remark2,
    check_theorem1,
    check_theorem2,
    mc_reports,
    mse_table,
    percent_relative_improvement,
    random_pd,
    random_psd,
    sigma_max,
    standard_hierarchies,
    verify_suite,
)
from hts_recon.hierarchy import build_summing_matrix, one_level
from hts_recon.reconcile import TrainingPanel, g_gls, g_ols
from hts_recon.simulate import run_monte_carlo, small_design

HIER = standard_hierarchies()
hier_names = st.sampled_from(sorted(HIER))
seeds = st.integers(0, 2**32 - 1)


def test_mse_table_examples():
    a = np.arange(6.0).reshape(3, 2)
    assert mse_table(a, a).tolist() == [0.0, 0.0]
    assert mse_table([[1.0, -2.0]], [[0.0, 0.0]]).tolist() == [1.0, 4.0]
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    assert np.allclose(mse_table(x, y), mse_loop(x, y), rtol=1e-14)
    with pytest.raises(DimensionMismatch):
        mse_table(x, y[:, :2])
    with pytest.raises(EmptyInput):
        mse_table(np.empty((0, 2)), np.empty((0, 2)))


def test_pri_examples():
    assert percent_relative_improvement([1.8], [2.0])[0] == pytest.approx(-10.0, abs=1e-12)
    assert percent_relative_improvement([2.5, 1.0], [2.5, 1.0]).tolist() == [0.0, 0.0]
    with pytest.raises(ZeroReference):
        percent_relative_improvement([1.0], [0.0])


@given(st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=2), st.floats(1e-6, 1e6))
def test_pri_monotone_and_zero_on_self(ms, ref):
    lo, hi = sorted(ms)
    p = percent_relative_improvement([lo, hi], [ref, ref])
    assert p[0] <= p[1]
    assert percent_relative_improvement([ref], [ref])[0] == 0.0


def test_build_report_levels():
    mse = {"base": [4.0, 2.0, 2.0], "ols": [2.0, 1.0, 3.0]}
    rep = build_report(mse, ["T", "A", "B"], ["Top", "Bottom", "Bottom"])
    assert rep.level_names == ("Top", "Bottom")
    assert rep.per_level.tolist() == [[4.0, 2.0], [2.0, 2.0]]
    assert rep.overall.tolist() == [pytest.approx(8 / 3), 2.0]
    assert rep.pri("ols", "Top") == -50.0 and rep.pri("ols", "Bottom") == 0.0
    assert rep.pri("ols") == pytest.approx(-25.0)
    assert rep.pri("base") == 0.0
    rows = list(rep.tidy_rows("c0"))
    assert len(rows) == 2 * (3 + 2 + 1)
    assert rows[-1] == ("c0", "outofsample", "ols", "overall", "Overall", 2.0, pytest.approx(-25.0))
    table = rep.text_table("demo")
    assert "unweighted" in table and "-50.0" in table
    with pytest.raises(ValueError):
        build_report(mse, ["T", "A", "B"], ["Top", "Bottom", "Bottom"], reference="wls")


def test_bu_bottom_pri_exactly_zero():
    res = run_monte_carlo(small_design(5, (0.0,), (101,), seed=2))
    for rep in mc_reports(res).values():
        assert rep.pri("bu", "Bottom") == 0.0


def test_gls_mint_trivial_omega_zero():
    s = HIER["figure1"]
    sigma = random_pd(s.m, np.random.default_rng(0))
    rep = check_gls_mint_equivalence(s, np.zeros((s.n, s.n)), sigma)
    assert rep.passed


def test_gls_identity_sigma_is_ols():
    s = HIER["figure1"]
    assert np.abs(g_gls(s, np.eye(s.m), use_pinv=True).g - g_ols(s).g).max() < 1e-10
    rep = check_gls_mint_equivalence(s, random_psd(s.n, np.random.default_rng(1)), np.eye(s.m))
    assert rep.passed


def test_gls_mint_rejects_indefinite_omega():
    s = HIER["3-node"]
    with pytest.raises(NotPositiveDefinite):
        check_gls_mint_equivalence(s, -np.eye(2), np.eye(3))


@given(hier_names, seeds)
def test_gls_mint_property(name, seed):
    s = HIER[name]
    rng = np.random.default_rng(seed)
    assert check_gls_mint_equivalence(s, random_psd(s.n, rng), random_pd(s.m, rng)).passed


def test_theorem1_identity_w():
    s = HIER["figure1"]
    rep = check_theorem1(s, np.eye(s.m))
    assert rep.passed
    assert rep.values["trace_mint"] == pytest.approx(rep.values["trace_ols"], abs=1e-12)
    assert rep.values["trace_ols"] == pytest.approx(s.n, abs=1e-12)


def test_theorem1_square_s():
    from hts_recon.hierarchy import HierarchySpec
    s = build_summing_matrix(HierarchySpec(("a", "b"), {}, ("a", "b")))
    rep = check_theorem1(s, random_pd(2, np.random.default_rng(3)))
    assert rep.passed
    v = rep.values
    assert v["trace_w"] == pytest.approx(v["trace_ols"]) == pytest.approx(v["trace_mint"])


@given(hier_names, seeds)
def test_theorem1_property(name, seed):
    s = HIER[name]
    assert check_theorem1(s, random_pd(s.m, np.random.default_rng(seed))).passed


def test_theorem2_zero_cross_and_identity_v():
    s = HIER["figure1"]
    rep = check_theorem2(s, random_pd(s.m, np.random.default_rng(0)), np.zeros((s.n, s.m)))
    assert rep.passed and rep.values["max_eig_delta"] == pytest.approx(0.0, abs=1e-12)
    rep = check_theorem2(s, np.eye(s.m), np.random.default_rng(1).standard_normal((s.n, s.m)))
    assert rep.passed
    # with V = I the starred difference is a projector minus I: eigenvalues in {-1, 0}
    assert rep.values["max_eig_delta_star"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        check_theorem2(s, np.eye(s.m), np.zeros((s.m, s.n)))


@given(hier_names, seeds)
def test_theorem2_property(name, seed):
    s = HIER[name]
    rng = np.random.default_rng(seed)
    v = random_pd(s.m, rng)
    rep = check_theorem2(s, v, rng.standard_normal((s.n, s.m)) * rng.uniform(0.1, 10))
    assert rep.passed
    # the starred difference does not depend on the cross moment
    other = check_theorem2(s, v, rng.standard_normal((s.n, s.m)))
    assert other.values["max_eig_delta_star"] == rep.values["max_eig_delta_star"]


def test_remark2_perfect_fit():
    s = build_summing_matrix(one_level(2))
    rng = np.random.default_rng(0)
    b = rng.standard_normal((30, 2))
    y = b @ s.s.T.astype(float)
    rep = check_remark2(TrainingPanel(b, y.copy(), y, "insample"), s)
    assert rep.passed
    assert rep.values["sse_emint_u"] == pytest.approx(0.0, abs=1e-18)
    assert rep.values["sse_mint_sample"] == pytest.approx(0.0, abs=1e-18)


def test_remark2_near_interpolation():
    s = build_summing_matrix(one_level(2))
    rng = np.random.default_rng(4)
    t = s.m + 2
    b = rng.standard_normal((t, s.n))
    y = b @ s.s.T.astype(float)
    yh = y + rng.standard_normal(y.shape)
    assert check_remark2(TrainingPanel(b, yh, y, "insample"), s).passed


def test_remark2_singular_gram():
    s = build_summing_matrix(one_level(2))
    b = np.random.default_rng(0).standard_normal((20, 2))
    y = b @ s.s.T.astype(float)
    yh = np.ones_like(y)
    with pytest.raises(SingularGram):
        check_remark2(TrainingPanel(b, yh, y, "insample"), s)


def test_ols_distance_cases():
    s = HIER["figure1"]
    rng = np.random.default_rng(2)
    act = rng.standard_normal(s.n) @ s.s.T.astype(float)
    coherent_base = rng.standard_normal(s.n) @ s.s.T.astype(float)
    ok, margin = check_ols_distance(s, coherent_base, act)
    assert ok and margin == pytest.approx(1e-10 * np.linalg.norm(act), abs=1e-9)
    # perturbation orthogonal to the columns of S is removed entirely
    u = s.u_t.T.astype(float)
    q, _ = np.linalg.qr(u)
    base = act + q @ rng.standard_normal(q.shape[1])
    ok, margin = check_ols_distance(s, base, act)
    assert ok and margin == pytest.approx(np.linalg.norm(base - act) + 1e-10 * np.linalg.norm(act), rel=1e-8)
    acts = rng.standard_normal((1000, s.n)) @ s.s.T.astype(float)
    bases = acts + rng.standard_normal((1000, s.m)) * 3
    assert check_ols_distance(s, bases, acts)[0]
    with pytest.raises(DimensionMismatch):
        check_ols_distance(s, np.zeros(3), np.zeros(3))


def test_sigma_max_ols_is_one():
    for s in HIER.values():
        assert sigma_max(s, g_ols(s).g) == pytest.approx(1.0, abs=1e-10)


def test_verify_suite_passes_and_negative_control_fails():
    lines = verify_suite(seed=3, instances=10, remark2_replications=5)
    assert [ln.name for ln in lines] == [
        "gls_equals_mint", "theorem1_mint_ols_base", "theorem2_mintu_vs_mint", "ols_euclidean_dominance",
        "sigma_max_projection", "special_case_collapses", "remark2_emint_u_in_sample"]
    assert all(ln.passed for ln in lines), [ln.render() for ln in lines]
    assert lines[0].render().startswith("PASS gls_equals_mint: 30/30")
    broken = verify_suite(seed=3, instances=10, tolerance=0.0, remark2_replications=5)
    assert not all(ln.passed for ln in broken)
