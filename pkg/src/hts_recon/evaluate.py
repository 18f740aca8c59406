"""Accuracy tables and numerical checks of the reconciliation theorems."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .covariance import cholesky, max_eigenvalue, min_eigenvalue, sample_covariance
from .errors import DegenerateVariance, DimensionMismatch, EmptyInput, NotPositiveDefinite, ZeroReference
from .hierarchy import SummingMatrix, build_summing_matrix, figure1_hierarchy, one_level, two_level
from .reconcile import (
    TrainingPanel,
    g_bottom_up,
    g_emint_u,
    g_gls,
    g_mint,
    g_ols,
    g_wls,
    mint_ju_form,
)

DEFAULT_EIG_TOL = 1e-9


# ---------------------------------------------------------------------------
# accuracy metrics
# ---------------------------------------------------------------------------

def mse_table(actuals, predictions) -> np.ndarray:
    a = np.atleast_2d(np.asarray(actuals, dtype=float))
    p = np.atleast_2d(np.asarray(predictions, dtype=float))
    if a.shape != p.shape:
        raise DimensionMismatch(f"actuals {a.shape} vs predictions {p.shape}")
    if a.shape[0] == 0:
        raise EmptyInput("no rows to score")
    return ((a - p) ** 2).mean(axis=0)


def percent_relative_improvement(method_mse, reference_mse) -> np.ndarray:
    """``100 (method / reference - 1)``; negative values are improvements."""
    m = np.asarray(method_mse, dtype=float)
    r = np.asarray(reference_mse, dtype=float)
    if np.any(r <= 0):
        raise ZeroReference("reference MSE must be strictly positive")
    return 100.0 * (m / r - 1.0)


@dataclass(frozen=True)
class EvaluationReport:
    methods: tuple
    labels: tuple
    level_names: tuple
    per_series_mse: np.ndarray  # [method, series]
    per_level: np.ndarray  # [method, level]
    overall: np.ndarray  # [method]
    reference: str
    pri_series: np.ndarray
    pri_level: np.ndarray
    pri_overall: np.ndarray
    sample_kind: str

    def pri(self, method: str, level: Optional[str] = None) -> float:
        k = self.methods.index(method)
        if level is None or level == "Overall":
            return float(self.pri_overall[k])
        return float(self.pri_level[k, self.level_names.index(level)])

    def tidy_rows(self, cell: str = ""):
        """(cell, sample, method, scope, name, mse, pri) rows; scope in series/level/overall."""
        for k, meth in enumerate(self.methods):
            for j, lab in enumerate(self.labels):
                yield (cell, self.sample_kind, meth, "series", lab,
                       float(self.per_series_mse[k, j]), float(self.pri_series[k, j]))
            for j, lev in enumerate(self.level_names):
                yield (cell, self.sample_kind, meth, "level", lev,
                       float(self.per_level[k, j]), float(self.pri_level[k, j]))
            yield (cell, self.sample_kind, meth, "overall", "Overall",
                   float(self.overall[k]), float(self.pri_overall[k]))

    def text_table(self, title: str = "") -> str:
        cols = [*self.level_names, "Overall"]
        width = max(len(m) for m in self.methods) + 2
        lines = []
        if title:
            lines.append(title)
        lines.append(f"% relative improvement in MSE vs {self.reference} ({self.sample_kind}; "
                     "levels average member-series MSE, unweighted)")
        lines.append("".ljust(width) + "".join(f"{c:>10}" for c in cols))
        for k, meth in enumerate(self.methods):
            vals = [*self.pri_level[k], self.pri_overall[k]]
            lines.append(meth.ljust(width) + "".join(f"{v:>10.1f}" for v in vals))
        return "\n".join(lines) + "\n"


def build_report(mse: dict, labels: Sequence[str], levels: Sequence[str],
                 reference: str = "base", sample_kind: str = "outofsample") -> EvaluationReport:
    """Aggregate per-series MSEs into level and overall tables (unweighted means)."""
    methods = tuple(mse)
    if reference not in mse:
        raise ValueError(f"reference {reference!r} missing from the MSE table")
    table = np.vstack([np.asarray(mse[m], dtype=float) for m in methods])
    if table.shape[1] != len(labels) or len(levels) != len(labels):
        raise DimensionMismatch("labels/levels do not match the MSE table")
    level_names = tuple(dict.fromkeys(levels))
    idx = {lev: [j for j, x in enumerate(levels) if x == lev] for lev in level_names}
    per_level = np.column_stack([table[:, idx[lev]].mean(axis=1) for lev in level_names])
    overall = table.mean(axis=1)
    r = methods.index(reference)
    return EvaluationReport(
        methods, tuple(labels), level_names, table, per_level, overall, reference,
        percent_relative_improvement(table, table[r]),
        percent_relative_improvement(per_level, per_level[r]),
        percent_relative_improvement(overall, overall[r]),
        sample_kind,
    )


def mc_reports(result, c: int = 0, hi: int = 0) -> dict:
    """In-sample (vs fitted values) and out-of-sample (vs base forecasts) reports for one MC cell."""
    return {samp: build_report(result.mse(c, hi, samp), result.labels, result.levels, "base", samp)
            for samp in ("insample", "outofsample")}


# ---------------------------------------------------------------------------
# theorem checks
# ---------------------------------------------------------------------------

@dataclass
class TheoremReport:
    name: str
    dims: tuple
    flags: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def record(self, key: str, margin: float, strict: bool = False):
        """Store a check whose margin must be >= 0 (> 0 when strict)."""
        self.margins[key] = float(margin)
        self.flags[key] = bool(margin > 0 if strict else margin >= 0)


def _spd_inverse(a: np.ndarray, what: str) -> np.ndarray:
    inv = linalg.cho_solve(cholesky(a, what), np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def check_gls_mint_equivalence(s: SummingMatrix, omega, sigma, tol: float = 1e-7) -> TheoremReport:
    """GLS on Sigma equals MinT on ``W = S Omega S^T + Sigma``."""
    omega = np.asarray(omega, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    cholesky(sigma, "Sigma")
    if omega.size and min_eigenvalue(omega) < -1e-10 * max(1.0, np.abs(omega).max()):
        raise NotPositiveDefinite("Omega is not positive semi-definite")
    sf = s.s.astype(float)
    w = sf @ omega @ sf.T + sigma
    w = 0.5 * (w + w.T)
    g_m = g_mint(s, w).g
    g_g = g_gls(s, sigma, use_pinv=True).g
    g_ju = mint_ju_form(s, sigma)
    rep = TheoremReport("gls_mint_equivalence", (s.m, s.n))
    rep.record("mint_vs_gls", tol - np.abs(g_m - g_g).max(initial=0.0), strict=True)
    rep.record("ju_sigma_vs_gls", tol - np.abs(g_ju - g_g).max(initial=0.0), strict=True)
    rep.record("ju_sigma_vs_mint", tol - np.abs(g_ju - g_m).max(initial=0.0), strict=True)
    rep.values["max_abs_diff"] = float(np.abs(g_m - g_g).max(initial=0.0))
    return rep


def check_theorem1(s: SummingMatrix, w, tol: float = DEFAULT_EIG_TOL) -> TheoremReport:
    """Population MSE ordering MinT <= OLS < base, in trace and per series."""
    w = np.asarray(w, dtype=float)
    cholesky(w, "W")
    sf = s.s.astype(float)
    p_ols = sf @ g_ols(s).g
    p_mint = sf @ g_mint(s, w).g
    v_ols = p_ols @ w @ p_ols.T
    v_mint = p_mint @ w @ p_mint.T
    scale = max_eigenvalue(w)
    tr_w, tr_ols, tr_mint = np.trace(w), np.trace(v_ols), np.trace(v_mint)

    w_inv = _spd_inverse(w, "W")
    d = sf @ np.linalg.inv(sf.T @ sf) - w_inv @ sf @ np.linalg.inv(sf.T @ w_inv @ sf)
    gap = v_ols - v_mint
    gap_d = sf @ d.T @ w @ d @ sf.T

    rep = TheoremReport("theorem1", (s.m, s.n))
    rep.values.update(trace_w=float(tr_w), trace_ols=float(tr_ols), trace_mint=float(tr_mint),
                      diag_w=np.diag(w).copy(), diag_ols=np.diag(v_ols).copy(), diag_mint=np.diag(v_mint).copy())
    rep.record("trace_mint_le_ols", tr_ols - tr_mint + tol * tr_w)
    if s.m_star > 0:
        rep.record("trace_ols_lt_base", tr_w - tr_ols, strict=True)
    else:
        rep.record("trace_ols_eq_base", tol * tr_w - abs(tr_w - tr_ols))
    rep.record("diag_mint_le_ols", float((np.diag(v_ols) - np.diag(v_mint)).min()) + tol * scale)
    rep.record("diag_mint_le_base", float((np.diag(w) - np.diag(v_mint)).min()) + tol * scale)
    rep.record("ols_minus_mint_psd", min_eigenvalue(gap) + tol * scale)
    rep.record("base_minus_mint_psd", min_eigenvalue(w - v_mint) + tol * scale)
    rep.record("d_identity", 1e-8 * scale - np.abs(gap - gap_d).max())
    rep.values["min_eig_gap"] = min_eigenvalue(gap)
    return rep


def check_theorem2(s: SummingMatrix, v, cross, tol: float = DEFAULT_EIG_TOL) -> TheoremReport:
    """MinT-U improves on the best projection: the MSE difference is negative semi-definite.

    ``v`` is ``E[yhat yhat^T]`` and ``cross`` is ``E[e_B yhat^T]`` (n x m).
    """
    v = np.asarray(v, dtype=float)
    cross = np.asarray(cross, dtype=float)
    if cross.shape != (s.n, s.m) or v.shape != (s.m, s.m):
        raise DimensionMismatch("v must be m x m and cross n x m")
    v_inv = _spd_inverse(v, "V")
    sf = s.s.astype(float)
    if s.m_star:
        u = s.u_t.T.astype(float)
        proj = u @ linalg.cho_solve(cholesky(u.T @ v @ u, "U^T V U"), u.T)
    else:
        proj = np.zeros((s.m, s.m))
    delta_star = proj - v_inv
    sc = sf @ cross
    delta = sc @ delta_star @ sc.T

    # same quantity from the MSE expansion S[E e e^T - c X^T - X c^T + X V X^T]S^T (E e e^T cancels)
    def mse_part(x):
        return sf @ (-cross @ x.T - x @ cross.T + x @ v @ x.T) @ sf.T

    direct = mse_part(cross @ v_inv) - mse_part(cross @ proj)

    star_scale = max_eigenvalue(v_inv)
    scale = max(star_scale * np.linalg.norm(sc, 2) ** 2, np.finfo(float).tiny)
    rep = TheoremReport("theorem2", (s.m, s.n))
    rep.record("delta_nsd", tol * scale - max_eigenvalue(delta))
    rep.record("delta_diag_nonpositive", tol * scale - float(np.diag(delta).max()))
    rep.record("delta_star_nsd", tol * star_scale - max_eigenvalue(delta_star))
    rep.record("direct_mse_agrees", 1e-8 * scale - np.abs(direct - delta).max(initial=0.0))
    rep.values.update(max_eig_delta=max_eigenvalue(delta), max_eig_delta_star=max_eigenvalue(delta_star))
    return rep


def check_remark2(panel: TrainingPanel, s: SummingMatrix, tol: float = DEFAULT_EIG_TOL) -> TheoremReport:
    """In-sample SSE of EMinT-U never exceeds that of MinT(Sample) on the same rows."""
    if panel.h != 1:
        raise ValueError("the in-sample comparison is stated for h = 1")
    y, yh = panel.y_mat, panel.yhat_mat
    resid = y - yh
    if np.any(resid):
        ge = g_emint_u(panel).g
    else:
        # coherent perfect fit: the Gram is singular but the min-norm solution reproduces B exactly
        ge = np.linalg.lstsq(yh, panel.b_mat, rcond=None)[0].T
    try:
        gm = g_mint(s, sample_covariance(resid)).g
        w_note = "sample"
    except DegenerateVariance:
        if np.any(resid):
            raise
        gm = g_ols(s).g  # zero residuals: every projection reproduces the coherent fit
        w_note = "zero_residuals"
    sf = s.s.astype(float)
    sse_e = float(((y - yh @ ge.T @ sf.T) ** 2).sum())
    sse_m = float(((y - yh @ gm.T @ sf.T) ** 2).sum())
    rep = TheoremReport("remark2", (s.m, s.n))
    rep.values.update(sse_emint_u=sse_e, sse_mint_sample=sse_m, w=w_note)
    # reconstruction rounding leaves squared errors of order eps^2 |y|^2 even for a perfect fit
    floor = 100.0 * s.m * np.finfo(float).eps ** 2 * float((y ** 2).sum())
    rep.record("emint_u_le_mint_sample", sse_m * (1.0 + tol) + floor - sse_e)
    return rep


def check_ols_distance(s: SummingMatrix, base_row, actual_row, tol: float = 1e-10):
    """Per-realisation Euclidean dominance of OLS; accepts vectors or row-stacked matrices.

    The guarantee needs coherent actuals (rows in the column space of S).

    Returns ``(passed, worst_margin)``.
    """
    base = np.atleast_2d(np.asarray(base_row, dtype=float))
    act = np.atleast_2d(np.asarray(actual_row, dtype=float))
    if base.shape != act.shape or base.shape[1] != s.m:
        raise DimensionMismatch(f"base {base.shape} and actual {act.shape} must be (.., {s.m})")
    sf = s.s.astype(float)
    recon = base @ g_ols(s).g.T @ sf.T
    margin = (np.linalg.norm(act - base, axis=1) + tol * np.linalg.norm(act, axis=1)
              - np.linalg.norm(act - recon, axis=1))
    worst = float(margin.min())
    return worst >= 0, worst


def sigma_max(s: SummingMatrix, g) -> float:
    """Largest singular value of ``S G``."""
    return float(np.linalg.norm(s.s.astype(float) @ np.asarray(g, dtype=float), 2))


# ---------------------------------------------------------------------------
# random instances and the verification suite
# ---------------------------------------------------------------------------

def random_pd(m: int, rng: np.random.Generator, ridge: float = 0.1) -> np.ndarray:
    """Random SPD matrix with heterogeneous scales."""
    a = rng.standard_normal((m, m))
    d = np.exp(rng.uniform(-1.0, 1.0, size=m))
    w = d[:, None] * (a @ a.T / m + ridge * np.eye(m)) * d[None, :]
    return 0.5 * (w + w.T)


def random_psd(n: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    k = n if rank is None else rank
    a = rng.standard_normal((n, k))
    return a @ a.T / max(k, 1)


def standard_hierarchies() -> dict:
    """The three structures used throughout: 3-node, Figure-1 (m=8) and 43-node."""
    return {
        "3-node": build_summing_matrix(one_level(2)),
        "figure1": build_summing_matrix(figure1_hierarchy()),
        "43-node": build_summing_matrix(two_level([6] * 6)),
    }


@dataclass
class SuiteLine:
    name: str
    passed: bool
    instances: int
    failures: int
    worst_margin: float

    def render(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.instances - self.failures}/{self.instances} instances, "
                f"worst margin {self.worst_margin:.3e}")


def _summarise(name: str, reports: list) -> SuiteLine:
    failures = sum(not r.passed for r in reports)
    worst = min((min(r.margins.values()) for r in reports), default=0.0)
    return SuiteLine(name, failures == 0, len(reports), failures, worst)


def verify_suite(seed: int = 1, instances: int = 100, tolerance: Optional[float] = None,
                 remark2_replications: int = 20) -> list:
    """Run every theorem check on random instances.

    ``tolerance`` overrides every check tolerance (``0`` is a negative control
    that should make the suite fail on rounding noise).
    """
    from .simulate import small_design  # deferred: simulate is heavier

    hier = standard_hierarchies()
    rng = np.random.default_rng(seed)
    eq_tol = 1e-7 if tolerance is None else tolerance
    eig_tol = DEFAULT_EIG_TOL if tolerance is None else tolerance
    lines = []

    eq, t1, t2 = [], [], []
    for name, s in hier.items():
        for _ in range(instances):
            eq.append(check_gls_mint_equivalence(s, random_psd(s.n, rng), random_pd(s.m, rng), eq_tol))
            t1.append(check_theorem1(s, random_pd(s.m, rng), eig_tol))
            v = random_pd(s.m, rng)
            t2.append(check_theorem2(s, v, rng.standard_normal((s.n, s.m)), eig_tol))
    lines.append(_summarise("gls_equals_mint", eq))
    lines.append(_summarise("theorem1_mint_ols_base", t1))
    lines.append(_summarise("theorem2_mintu_vs_mint", t2))

    # OLS per-realisation dominance and sigma_max of S G
    ols_reports, smax_reports = [], []
    ols_tol = 1e-10 if tolerance is None else tolerance
    for name, s in hier.items():
        bottom = rng.standard_normal((instances, s.n)) * np.exp(rng.uniform(-1, 1, s.n))
        act = bottom @ s.s.T.astype(float)  # actuals must be coherent
        base = act + rng.standard_normal((instances, s.m)) * np.exp(rng.uniform(-1, 1, s.m))
        ok, margin = check_ols_distance(s, base, act, ols_tol)
        r = TheoremReport("ols_distance", (s.m, s.n))
        r.record("ols_dominates_base", margin)
        ols_reports.append(r)
        for _ in range(max(1, instances // 10)):
            w = random_pd(s.m, rng)
            r = TheoremReport("sigma_max", (s.m, s.n))
            sm_tol = 1e-8 if tolerance is None else tolerance
            r.record("ols_equals_one", sm_tol - abs(sigma_max(s, g_ols(s).g) - 1.0))
            for label, g in (("mint", g_mint(s, w).g), ("wls", g_wls(s, np.diag(np.diag(w))).g),
                             ("bu", g_bottom_up(s).g)):
                val = sigma_max(s, g)
                r.record(f"{label}_ge_one", val - (1.0 - sm_tol))
                if s.m_star:
                    r.record(f"{label}_gt_one", val - (1.0 + sm_tol), strict=True)
            smax_reports.append(r)
    lines.append(_summarise("ols_euclidean_dominance", ols_reports))
    lines.append(_summarise("sigma_max_projection", smax_reports))

    # special-case collapses
    coll = []
    c_tol = 1e-10 if tolerance is None else tolerance
    for name, s in hier.items():
        for _ in range(max(1, instances // 10)):
            r = TheoremReport("special_cases", (s.m, s.n))
            r.record("mint_identity_is_ols", c_tol - np.abs(g_mint(s, np.eye(s.m)).g - g_ols(s).g).max())
            lam = np.diag(np.exp(rng.uniform(-2, 2, s.m)))
            r.record("mint_diag_is_wls", c_tol - np.abs(g_mint(s, lam).g - g_wls(s, lam).g).max())
            coll.append(r)
    lines.append(_summarise("special_case_collapses", coll))

    # Remark 2 on simulated small-design panels
    rem = []
    design = small_design(remark2_replications, (-0.8, 0.0, 0.8), (101,), seed)
    s = build_summing_matrix(design.hierarchy)
    for _, cfg in design.cells():
        for r_ in range(remark2_replications):
            rem.append(_remark2_instance(cfg, s, design.max_p, np.random.default_rng(seed ^ r_), eig_tol))
    lines.append(_summarise("remark2_emint_u_in_sample", rem))
    return lines


def _remark2_instance(cfg, s, max_p, rng, tol):
    from .basemodels import fit_panel
    from .simulate import simulate_var1

    y = simulate_var1(cfg, s, rng).y[:-1]
    fp = fit_panel(y, max_p, 1, s.labels)
    actual = y[fp.start:]
    panel = TrainingPanel(actual[:, s.m_star:], fp.fitted, actual, "insample", h=1)
    return check_remark2(panel, s, tol)
