"""Covariance estimators feeding the reconciliation maps, plus PSD helpers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from . import _kernels
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    NonFiniteInput,
    NonSymmetric,
    NotPositiveDefinite,
    TooFewRows,
)

KINDS = ("identity_scaled", "diagonal", "sample", "shrink", "user_supplied")
SYM_TOL = 1e-12
DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class CovarianceEstimate:
    w: np.ndarray
    kind: str
    shrink_lambda: Optional[float] = None
    h: int = 1

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got {w.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if (self.kind == "shrink") != (self.shrink_lambda is not None):
            raise ValueError("shrink_lambda is required for, and only for, kind='shrink'")
        if not np.all(np.isfinite(w)):
            raise NonFiniteInput("covariance has non-finite entries")
        scale = max(1.0, float(np.abs(w).max(initial=0.0)))
        if np.abs(w - w.T).max(initial=0.0) > SYM_TOL * scale:
            raise NonSymmetric("covariance is not symmetric")
        d = np.diag(w)
        if np.any(d <= 0):
            raise DegenerateVariance(f"non-positive variance in column(s) {np.flatnonzero(d <= 0).tolist()}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.w.shape[0]


def _check_residuals(residuals, min_rows: int) -> np.ndarray:
    x = np.asarray(residuals, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"residuals must be a T x m matrix, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise TooFewRows(f"need at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("residuals contain NaN or inf")
    return x


def _column_variances(xc: np.ndarray) -> np.ndarray:
    var = np.einsum("ij,ij->j", xc, xc) / (xc.shape[0] - 1)
    zero = np.flatnonzero(var <= 0)
    if zero.size:
        raise DegenerateVariance(f"zero variance in column(s) {zero.tolist()}")
    return var


def _sample(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=0)
    var = _column_variances(xc)
    w = xc.T @ xc / (x.shape[0] - 1)
    w = 0.5 * (w + w.T)
    # diagonal taken from the same reduction diagonal_covariance uses
    np.fill_diagonal(w, var)
    return w


def sample_covariance(residuals, h: int = 1) -> CovarianceEstimate:
    """Unbiased (``T - 1``) covariance of column-centred residuals."""
    x = _check_residuals(residuals, 2)
    return CovarianceEstimate(_sample(x), "sample", h=h)


def shrinkage_intensity(residuals) -> float:
    """Schafer-Strimmer intensity for shrinking correlations towards zero.

    ``sum var(r_ij) / sum r_ij^2`` over ``i != j``, clamped to ``[0, 1]``.
    """
    x = _check_residuals(residuals, 3)
    xc = x - x.mean(axis=0)
    sd = np.sqrt(_column_variances(xc))
    xs = np.ascontiguousarray(xc / sd)
    sum_var, sum_sq = _kernels.ss_sums(xs)
    if sum_sq <= 0.0:
        return 1.0
    return float(min(1.0, max(0.0, sum_var / sum_sq)))


def shrink_covariance(residuals, lam: Optional[float] = None, h: int = 1) -> CovarianceEstimate:
    """Shrink the sample covariance towards its own diagonal.

    ``lam`` overrides the data-driven intensity (clamped to ``[0, 1]``).
    """
    x = _check_residuals(residuals, 3)
    w = _sample(x)
    lam = shrinkage_intensity(x) if lam is None else float(min(1.0, max(0.0, lam)))
    d = np.diag(w).copy()
    out = (1.0 - lam) * w
    np.fill_diagonal(out, d)
    return CovarianceEstimate(out, "shrink", shrink_lambda=lam, h=h)


def diagonal_covariance(residuals, h: int = 1) -> CovarianceEstimate:
    x = _check_residuals(residuals, 2)
    return CovarianceEstimate(np.diag(_column_variances(x - x.mean(axis=0))), "diagonal", h=h)


def identity_scaled(m: int, k: float = 1.0, h: int = 1) -> CovarianceEstimate:
    if k <= 0:
        raise ValueError("scale must be positive")
    return CovarianceEstimate(k * np.eye(m), "identity_scaled", h=h)


def user_supplied(mat, h: int = 1) -> CovarianceEstimate:
    return CovarianceEstimate(np.asarray(mat, dtype=float), "user_supplied", h=h)


def pseudo_inverse(mat, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric matrix by eigendecomposition.

    Eigenvalues with ``|lambda| <= rank_tol * max|lambda|`` are treated as zero.
    """
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > 1e-10 * scale:
        raise NonSymmetric("pseudo_inverse expects a symmetric matrix")
    evals, evecs = np.linalg.eigh(0.5 * (a + a.T))
    if evals.size == 0:
        return np.zeros_like(a)
    cutoff = rank_tol * np.abs(evals).max()
    keep = np.abs(evals) > cutoff
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / evals[keep]
    out = (evecs * inv) @ evecs.T
    return 0.5 * (out + out.T)


def cholesky(mat, what: str = "matrix"):
    """Lower Cholesky factor (scipy ``cho_factor`` tuple), raising NotPositiveDefinite."""
    try:
        return linalg.cho_factor(np.asarray(mat, dtype=float), lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc


def is_positive_definite(mat) -> bool:
    try:
        cholesky(mat)
    except NotPositiveDefinite:
        return False
    return True


def min_eigenvalue(mat) -> float:
    a = np.asarray(mat, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])


def max_eigenvalue(mat) -> float:
    a = np.asarray(mat, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[-1])
