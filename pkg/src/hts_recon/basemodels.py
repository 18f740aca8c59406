"""Univariate AR base models selected by AICc, fitted by conditional least squares."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    HistoryTooShort,
    NonFiniteInput,
    SeriesTooShort,
)

DEFAULT_MAX_P = 5
STATIONARITY_SLACK = 1e-6


@dataclass(frozen=True)
class ARModel:
    order_p: int
    intercept: float
    coefficients: np.ndarray
    sigma2: float
    aicc: float = float("nan")
    series_id: str = ""

    def __post_init__(self):
        coefs = np.array(self.coefficients, dtype=float).reshape(-1)
        if coefs.shape[0] != self.order_p:
            raise DimensionMismatch(f"AR({self.order_p}) needs {self.order_p} coefficients, got {coefs.shape[0]}")
        if not self.sigma2 > 0:
            raise DegenerateVariance("innovation variance must be positive")
        coefs.setflags(write=False)
        object.__setattr__(self, "coefficients", coefs)

    def spectral_radius(self) -> float:
        return companion_radius(self.coefficients)


def companion_radius(coefs) -> float:
    p = len(coefs)
    if p == 0:
        return 0.0
    comp = np.zeros((p, p))
    comp[0] = coefs
    comp[1:, :-1] = np.eye(p - 1)
    return float(np.abs(np.linalg.eigvals(comp)).max())


def _check_series(series, min_len: int) -> np.ndarray:
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise DimensionMismatch("series must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise NonFiniteInput("series contains NaN or inf")
    if y.shape[0] < min_len:
        raise SeriesTooShort(f"series of length {y.shape[0]} is shorter than the required {min_len}")
    return y


def aicc(rss: float, t_eff: int, p: int) -> float:
    """Gaussian AICc with ``k = p + 2`` (intercept, p lags, variance)."""
    k = p + 2
    sigma2 = rss / t_eff
    loglik = -0.5 * t_eff * (np.log(2.0 * np.pi * sigma2) + 1.0)
    return float(-2.0 * loglik + 2.0 * k * t_eff / (t_eff - k - 1))


def lag_design(y: np.ndarray, p: int, start: int) -> np.ndarray:
    """Rows ``[1, y_{t-1}, ..., y_{t-p}]`` for ``t = start .. T-1``."""
    t = y.shape[0]
    x = np.ones((t - start, p + 1))
    for i in range(1, p + 1):
        x[:, i] = y[start - i:t - i]
    return x


def fit_ar(series, max_p: int = DEFAULT_MAX_P, series_id: str = "") -> ARModel:
    """Fit AR(p) for p = 0..max_p on the common sample ``t >= max_p`` and keep the AICc winner.

    Candidates whose companion matrix is explosive are skipped.
    """
    if max_p < 0:
        raise ValueError("max_p must be nonnegative")
    y = _check_series(series, max_p + 10)
    if np.ptp(y) == 0:
        raise DegenerateVariance(f"series {series_id!r} is constant")
    t_eff = y.shape[0] - max_p
    target = y[max_p:]
    best: Optional[ARModel] = None
    for p in range(max_p + 1):
        if t_eff - (p + 2) - 1 <= 0:
            break
        x = lag_design(y, p, max_p)
        beta, *_ = np.linalg.lstsq(x, target, rcond=None)
        resid = target - x @ beta
        rss = float(resid @ resid)
        if rss <= 0:
            rss = np.finfo(float).tiny
        if companion_radius(beta[1:]) >= 1.0 + STATIONARITY_SLACK:
            continue
        score = aicc(rss, t_eff, p)
        if best is None or score < best.aicc:
            best = ARModel(p, float(beta[0]), beta[1:], rss / t_eff, score, series_id)
    if best is None:  # pragma: no cover - p = 0 is always admissible
        raise SeriesTooShort("no admissible AR order")
    return best


def forecast(model: ARModel, history, h: int) -> np.ndarray:
    """Iterated 1..h step forecasts from the end of ``history``."""
    if h < 1:
        raise ValueError("h must be >= 1")
    y = np.asarray(history, dtype=float)
    p = model.order_p
    if y.shape[0] < p:
        raise HistoryTooShort(f"AR({p}) needs {p} past values, got {y.shape[0]}")
    buf = list(y[y.shape[0] - p:]) if p else []
    out = np.empty(h)
    for j in range(h):
        val = model.intercept
        for i in range(p):
            val += model.coefficients[i] * buf[-1 - i]
        buf.append(val)
        out[j] = val
    return out


def insample_fitted(model: ARModel, series, h: int = 1, start: Optional[int] = None):
    """h-step fitted values and residuals for ``t = start .. T-1`` (0-based).

    ``start`` defaults to ``p + h - 1``, the first index with enough history.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    y = _check_series(series, model.order_p + h + 1)
    first = model.order_p + h - 1
    start = first if start is None else start
    if start < first or start >= y.shape[0]:
        raise SeriesTooShort(f"start {start} outside [{first}, {y.shape[0] - 1}]")
    fitted = _kernels.ar_fitted(y, float(model.intercept), np.ascontiguousarray(model.coefficients), int(h), int(start))
    return fitted, y[start:] - fitted


@dataclass(frozen=True)
class ForecastPanel:
    base: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    h: int
    models: tuple = field(default=())
    start: int = 0

    @property
    def actuals(self) -> np.ndarray:
        return self.fitted + self.residuals


def fit_panel(y_train, max_p: int = DEFAULT_MAX_P, h: int = 1,
              labels: Optional[Sequence[str]] = None) -> ForecastPanel:
    """Fit one AR model per column and align fitted values from ``max_p + h - 1`` onward.

    ``base`` holds the 1..h step forecasts from the end of the training data.
    """
    y = np.asarray(y_train, dtype=float)
    if y.ndim != 2:
        raise DimensionMismatch("training panel must be T x m")
    labels = list(labels) if labels is not None else [str(i) for i in range(y.shape[1])]
    start = max_p + h - 1
    models, base, fitted, resid = [], [], [], []
    for k in range(y.shape[1]):
        mod = fit_ar(y[:, k], max_p, labels[k])
        f, r = insample_fitted(mod, y[:, k], h, start)
        models.append(mod)
        base.append(forecast(mod, y[:, k], h))
        fitted.append(f)
        resid.append(r)
    return ForecastPanel(np.column_stack(base), np.column_stack(fitted), np.column_stack(resid),
                         h, tuple(models), start)
