"""Reconciliation maps G (n x m) and their application ``y_tilde = S G y_hat``.

Projection methods (BU, OLS, WLS, GLS, MinT) satisfy ``G S = I_n``; the
unconstrained estimators (ERM, EMinT-U) are least-squares fits of bottom-level
actuals on base forecasts and do not.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .covariance import CovarianceEstimate, cholesky, pseudo_inverse
from .errors import (
    AllZeroForecasts,
    NotPositiveDefinite,
    DimensionMismatch,
    EmptyPanel,
    FormMismatch,
    MisalignedRows,
    NonFiniteInput,
    NotDiagonal,
    RankDeficientReducedGram,
    SingularGram,
)
from .hierarchy import DEFAULT_COHERENCE_TOL, SummingMatrix

METHODS = ("BU", "OLS", "WLS", "GLS", "MinT", "ERM", "EMinT_U")
PROJECTION_TOL = 1e-8
FORM_TOL = 1e-7
GRAM_RATIO_TOL = 1e-10
W_RATIO_TOL = 1e-12

CovLike = Union[CovarianceEstimate, np.ndarray]


@dataclass(frozen=True)
class ReconciliationMap:
    g: np.ndarray
    method: str
    is_projection: bool
    h: int = 1
    cov_kind: str = "none"

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim != 2:
            raise DimensionMismatch("G must be a matrix")
        if not np.all(np.isfinite(g)):
            raise NonFiniteInput(f"{self.method}: G has non-finite entries")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    def projection_error(self, s: SummingMatrix) -> float:
        return float(np.abs(self.g @ s.s - np.eye(s.n)).max(initial=0.0))


@dataclass(frozen=True)
class TrainingPanel:
    """Aligned rows of bottom actuals, base forecasts (or fitted values) and actuals."""

    b_mat: np.ndarray
    yhat_mat: np.ndarray
    y_mat: np.ndarray
    alignment: str
    t1: Optional[int] = None
    h: int = 1

    def __post_init__(self):
        if self.alignment not in ("holdout", "insample"):
            raise ValueError("alignment must be 'holdout' or 'insample'")
        b, yh, y = (np.asarray(a, dtype=float) for a in (self.b_mat, self.yhat_mat, self.y_mat))
        if not (b.ndim == yh.ndim == y.ndim == 2):
            raise DimensionMismatch("panel blocks must be matrices")
        if not (b.shape[0] == yh.shape[0] == y.shape[0]):
            raise MisalignedRows(f"row counts differ: B {b.shape[0]}, Yhat {yh.shape[0]}, Y {y.shape[0]}")
        if yh.shape[1] != y.shape[1]:
            raise DimensionMismatch("Yhat and Y must have the same columns")
        if self.alignment == "holdout" and self.t1 is None:
            raise ValueError("holdout panels need the split index t1")
        for name, a in (("b_mat", b), ("yhat_mat", yh), ("y_mat", y)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_actuals(cls, y, yhat, s: SummingMatrix, alignment: str, t1: Optional[int] = None,
                     h: int = 1, tol: float = DEFAULT_COHERENCE_TOL) -> "TrainingPanel":
        """Take B as the bottom block of coherent actuals ``y`` (checked against S)."""
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != s.m:
            raise DimensionMismatch(f"actuals need {s.m} columns, got {y.shape}")
        b = y[:, s.m_star:]
        viol = np.abs(y - b @ s.s.T).max(initial=0.0)
        if viol > tol * max(1.0, np.abs(y).max(initial=0.0)):
            raise DimensionMismatch(f"actuals are not coherent with S (max violation {viol:.3g})")
        return cls(b, yhat, y, alignment, t1, h)

    @property
    def rows(self) -> int:
        return self.b_mat.shape[0]


def _as_matrix(cov: CovLike) -> tuple[np.ndarray, str]:
    if isinstance(cov, CovarianceEstimate):
        return cov.w, cov.kind
    return np.asarray(cov, dtype=float), "user_supplied"


def _u(s: SummingMatrix) -> np.ndarray:
    return s.u_t.T.astype(float)


def _projection_flag(g: np.ndarray, s: SummingMatrix) -> bool:
    return bool(np.abs(g @ s.s - np.eye(s.n)).max(initial=0.0) < PROJECTION_TOL)


def g_bottom_up(s: SummingMatrix) -> ReconciliationMap:
    return ReconciliationMap(s.j.astype(float), "BU", True)


def _gls_form(s: SummingMatrix, w: np.ndarray, what: str) -> np.ndarray:
    """``(S^T W^{-1} S)^{-1} S^T W^{-1}`` through two Cholesky solves."""
    sf = s.s.astype(float)
    wi_s = linalg.cho_solve(cholesky(w, what), sf)
    gram = sf.T @ wi_s
    gram = 0.5 * (gram + gram.T)
    try:
        fac = linalg.cho_factor(gram, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularGram(f"S^T {what}^-1 S is singular") from exc
    return linalg.cho_solve(fac, wi_s.T)


def g_ols(s: SummingMatrix) -> ReconciliationMap:
    sf = s.s.astype(float)
    gram = sf.T @ sf
    try:
        fac = linalg.cho_factor(gram, lower=True)
    except linalg.LinAlgError as exc:  # pragma: no cover - S has full column rank by construction
        raise SingularGram("S^T S is singular") from exc
    return ReconciliationMap(linalg.cho_solve(fac, sf.T), "OLS", True, cov_kind="identity_scaled")


def g_wls(s: SummingMatrix, lam: CovLike) -> ReconciliationMap:
    w, kind = _as_matrix(lam)
    if w.shape != (s.m, s.m):
        raise DimensionMismatch(f"weights must be {s.m} x {s.m}, got {w.shape}")
    if np.any(w - np.diag(np.diag(w))):
        raise NotDiagonal("WLS needs a diagonal covariance")
    d = np.diag(w)
    if np.any(d <= 0):
        raise SingularGram("WLS weights must be strictly positive")
    sf = s.s.astype(float)
    sw = sf / d[:, None]  # Lambda^{-1} S
    gram = sf.T @ sw
    fac = linalg.cho_factor(0.5 * (gram + gram.T), lower=True)
    return ReconciliationMap(linalg.cho_solve(fac, sw.T), "WLS", True, cov_kind=kind)


def mint_ju_form(s: SummingMatrix, w: np.ndarray) -> np.ndarray:
    """``J - J W U (U^T W U)^{-1} U^T``; only an m* x m* system is factorised."""
    jf = s.j.astype(float)
    if s.m_star == 0:
        return jf
    u = _u(s)
    jwu = w[s.m_star:, :] @ u
    utwu = u.T @ w @ u
    fac = cholesky(0.5 * (utwu + utwu.T), "U^T W U")
    return jf - linalg.cho_solve(fac, jwu.T).T @ u.T


def g_mint(s: SummingMatrix, w: CovLike, check_forms: bool = True) -> ReconciliationMap:
    """Trace-minimising projection; returns the J/U form after cross-checking the GLS-type form."""
    wm, kind = _as_matrix(w)
    if wm.shape != (s.m, s.m):
        raise DimensionMismatch(f"W must be {s.m} x {s.m}, got {wm.shape}")
    cholesky(wm, "W")
    ev = np.linalg.eigvalsh(wm)
    if ev[0] <= W_RATIO_TOL * ev[-1]:
        # e.g. residuals that are themselves coherent; both closed forms break down
        raise NotPositiveDefinite(
            f"W is numerically singular (eigenvalue ratio {ev[0] / ev[-1]:.2e}); "
            "use a shrinkage estimate or more data"
        )
    g2 = mint_ju_form(s, wm)
    if check_forms:
        g1 = _gls_form(s, wm, "W")
        gap = np.abs(g1 - g2).max(initial=0.0)
        if gap >= FORM_TOL * max(1.0, np.abs(g2).max(initial=0.0)):
            raise FormMismatch(f"MinT closed forms disagree by {gap:.3g}")
    return ReconciliationMap(g2, "MinT", True, cov_kind=kind)


def g_gls(s: SummingMatrix, sigma: CovLike, use_pinv: bool = True,
          rank_tol: float = 1e-10) -> ReconciliationMap:
    """``(S^T Sigma^+ S)^{-1} S^T Sigma^+`` with Sigma the coherence-error covariance."""
    sig, kind = _as_matrix(sigma)
    if sig.shape != (s.m, s.m):
        raise DimensionMismatch(f"Sigma must be {s.m} x {s.m}, got {sig.shape}")
    if not use_pinv:
        return ReconciliationMap(_gls_form(s, sig, "Sigma"), "GLS", True, cov_kind=kind)
    sf = s.s.astype(float)
    p = pseudo_inverse(sig, rank_tol)
    ps = p @ sf
    gram = sf.T @ ps
    gram = 0.5 * (gram + gram.T)
    ev = np.linalg.eigvalsh(gram)
    if ev.size and (ev[-1] <= 0 or ev[0] <= rank_tol * ev[-1]):
        raise RankDeficientReducedGram("S^T Sigma^+ S is singular: Sigma's null space meets col(S)")
    g = linalg.solve(gram, ps.T, assume_a="pos")
    return ReconciliationMap(g, "GLS", _projection_flag(g, s), cov_kind=kind)


def _gram_ratio(yhat: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(yhat.T @ yhat)
    if ev[-1] <= 0:
        return 0.0
    return float(ev[0] / ev[-1])


def _lstsq_qr(yhat: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return G with ``yhat @ G.T ~ b`` (full column rank yhat)."""
    q, r = np.linalg.qr(yhat, mode="reduced")
    return linalg.solve_triangular(r, q.T @ b, lower=False).T


def g_erm(panel: TrainingPanel) -> ReconciliationMap:
    """Holdout least-squares map; thin-SVD minimum-norm solution when the Gram matrix is singular."""
    if panel.alignment != "holdout":
        raise MisalignedRows("ERM needs a holdout-aligned panel")
    if panel.rows == 0:
        raise EmptyPanel("ERM panel has no rows")
    yh, b = panel.yhat_mat, panel.b_mat
    if panel.rows >= yh.shape[1] and _gram_ratio(yh) > GRAM_RATIO_TOL:
        g = _lstsq_qr(yh, b)
    else:
        u, d, vt = np.linalg.svd(yh, full_matrices=False)
        tol = max(yh.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0)
        keep = d > tol
        if not np.any(keep) or d[0] == 0:
            raise AllZeroForecasts("forecast panel has no singular value above tolerance")
        g = (b.T @ u[:, keep]) / d[keep] @ vt[keep]
    return ReconciliationMap(g, "ERM", False, h=panel.h, cov_kind="holdout")


def g_emint_u(panel: TrainingPanel) -> ReconciliationMap:
    """In-sample unconstrained estimator ``B^T Yhat (Yhat^T Yhat)^{-1}``."""
    if panel.alignment != "insample":
        raise MisalignedRows("EMinT-U needs an in-sample aligned panel")
    yh, b = panel.yhat_mat, panel.b_mat
    if panel.rows < yh.shape[1] or _gram_ratio(yh) <= GRAM_RATIO_TOL:
        raise SingularGram(
            f"Yhat^T Yhat is not numerically positive definite ({panel.rows} rows, {yh.shape[1]} series); "
            "use more data or the ERM thin-SVD path"
        )
    return ReconciliationMap(_lstsq_qr(yh, b), "EMinT_U", False, h=panel.h, cov_kind="insample")


def apply(rmap: ReconciliationMap, s: SummingMatrix, base) -> np.ndarray:
    """Reconcile a length-m vector or a T x m matrix of base forecasts."""
    x = np.asarray(base, dtype=float)
    if x.shape[-1] != s.m or rmap.g.shape != (s.n, s.m) or x.ndim not in (1, 2):
        raise DimensionMismatch(f"base {x.shape}, G {rmap.g.shape}, S {s.s.shape} do not conform")
    return (x @ rmap.g.T) @ s.s.T


def coherence_gap(s: SummingMatrix, y) -> float:
    """``max |U^T y|`` over rows; zero for coherent vectors."""
    x = np.atleast_2d(np.asarray(y, dtype=float))
    if s.m_star == 0:
        return 0.0
    return float(np.abs(x @ s.u_t.T).max(initial=0.0))
