"""Synthetic VAR(1) hierarchies and the Monte Carlo reconciliation experiment."""
from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import _kernels
from .basemodels import DEFAULT_MAX_P, fit_ar, forecast, insample_fitted
from .covariance import cholesky, diagonal_covariance, sample_covariance, shrink_covariance
from .errors import (
    ModulusOutOfRange,
    NotPositiveDefinite,
    ReconError,
    RhoOutOfRange,
    UnstableCoefficient,
)
from .hierarchy import HierarchySpec, ObservationPanel, SummingMatrix, build_summing_matrix, two_level
from .reconcile import (
    TrainingPanel,
    apply,
    g_bottom_up,
    g_emint_u,
    g_mint,
    g_ols,
    g_wls,
)

MC_METHODS = ("base", "bu", "ols", "wls", "mint_sample", "mint_shrink", "emint_u")
SAMPLES = ("insample", "outofsample")
RHO_LIMIT = 0.8


# ---------------------------------------------------------------------------
# design building blocks
# ---------------------------------------------------------------------------

def rotation_coefficient(modulus: float, angle: float) -> np.ndarray:
    """Real 2x2 matrix ``r R(theta)`` whose eigenvalues are ``r exp(+-i theta)``."""
    if not 0.0 < modulus < 1.0:
        raise ModulusOutOfRange(f"modulus must lie in (0, 1), got {modulus}")
    c, s = math.cos(angle), math.sin(angle)
    return modulus * np.array([[c, -s], [s, c]])


def small_design_coeff() -> np.ndarray:
    """blockdiag(A1, A2) with eigenvalues 0.6 e^{+-i pi/3} and 0.9 e^{+-i pi/6}."""
    return linalg.block_diag(rotation_coefficient(0.6, math.pi / 3), rotation_coefficient(0.9, math.pi / 6))


def small_design_cov(rho: float) -> np.ndarray:
    if abs(rho) > RHO_LIMIT:
        raise RhoOutOfRange(f"|rho| must be <= {RHO_LIMIT}, got {rho}")
    off = math.sqrt(6.0) * rho
    block = np.array([[2.0, off], [off, 3.0]])
    return linalg.block_diag(block, block)


def large_design_coeff(n_blocks: int = 18) -> np.ndarray:
    """Alternating A1/A2 rotation blocks (n = 2 * n_blocks)."""
    a1 = rotation_coefficient(0.6, math.pi / 3)
    a2 = rotation_coefficient(0.9, math.pi / 6)
    return linalg.block_diag(*[a1 if k % 2 == 0 else a2 for k in range(n_blocks)])


def block_correlation(n_blocks: int, block_size: int, within_range=(0.2, 0.7), between_eps: float = 0.1,
                      rng: Optional[np.random.Generator] = None, noise_dim: Optional[int] = None) -> np.ndarray:
    """Compound-symmetric blocks with small nonnegative between-block correlations.

    Block ``b`` gets its own ``rho_b ~ U(lo, hi)``. Between-block entries are
    ``between_eps * u_i . u_j`` for nonnegative unit-norm noise vectors ``u_i``
    (a noise-perturbation construction in the spirit of Hardin et al.).
    """
    lo, hi = within_range
    if not 0.0 <= lo < hi < 1.0:
        raise ValueError("within_range must satisfy 0 <= lo < hi < 1")
    if between_eps < 0:
        raise ValueError("between_eps must be nonnegative")
    rng = np.random.default_rng() if rng is None else rng
    n = n_blocks * block_size
    rhos = rng.uniform(lo, hi, size=n_blocks)
    corr = np.zeros((n, n))
    block_id = np.repeat(np.arange(n_blocks), block_size)
    for b, r in enumerate(rhos):
        sl = slice(b * block_size, (b + 1) * block_size)
        corr[sl, sl] = r
    if between_eps > 0:
        k = n if noise_dim is None else noise_dim
        u = np.abs(rng.standard_normal((k, n)))
        u /= np.linalg.norm(u, axis=0)
        noise = u.T @ u
        noise = 0.5 * (noise + noise.T)
        off = block_id[:, None] != block_id[None, :]
        corr[off] = between_eps * noise[off]
    np.fill_diagonal(corr, 1.0)
    try:
        cholesky(corr, "correlation matrix")
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"between_eps={between_eps} breaks positive definiteness; reduce it") from exc
    return corr


def cov_from_correlation(corr, sd_range=(math.sqrt(2.0), math.sqrt(6.0)), negate_fraction: float = 0.0,
                         rng: Optional[np.random.Generator] = None, max_retries: int = 10) -> np.ndarray:
    """``D corr D`` with standard deviations drawn from ``U(sd_range)``.

    ``negate_fraction`` of the variables have their sign flipped, which turns
    their covariances with unflipped variables negative while keeping the
    matrix positive definite.
    """
    corr = np.asarray(corr, dtype=float)
    n = corr.shape[0]
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = sd_range
    sd = rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, float(lo))
    cov = sd[:, None] * corr * sd[None, :]
    cov = 0.5 * (cov + cov.T)
    if negate_fraction <= 0:
        cholesky(cov, "covariance")
        return cov
    n_flip = int(round(negate_fraction * n))
    order = rng.permutation(n)
    for _ in range(max_retries):
        sign = np.ones(n)
        sign[order[:n_flip]] = -1.0
        out = sign[:, None] * cov * sign[None, :]
        try:
            cholesky(out, "covariance")
            return out
        except NotPositiveDefinite:
            n_flip = max(0, n_flip - 1)
    raise NotPositiveDefinite("no positive definite sign pattern found")


def stationary_covariance(coeff, innov_cov) -> np.ndarray:
    """Solve ``G = A G A^T + Sigma``."""
    return linalg.solve_discrete_lyapunov(np.asarray(coeff, float), np.asarray(innov_cov, float))


# ---------------------------------------------------------------------------
# VAR(1) simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Var1Config:
    coeff: np.ndarray
    innov_cov: np.ndarray
    t_total: int
    burn_in: int = 100
    seed: int = 0

    def __post_init__(self):
        a = np.array(self.coeff, dtype=float)
        sig = np.array(self.innov_cov, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or sig.shape != a.shape:
            raise ValueError(f"coeff {a.shape} and innov_cov {sig.shape} must be matching square matrices")
        if a.size and np.abs(np.linalg.eigvals(a)).max() >= 1.0:
            raise UnstableCoefficient("spectral radius of the coefficient matrix must be < 1")
        cholesky(sig, "innovation covariance")
        if self.t_total < 1 or self.burn_in < 0:
            raise ValueError("t_total must be >= 1 and burn_in >= 0")
        a.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "coeff", a)
        object.__setattr__(self, "innov_cov", sig)


def simulate_bottom(cfg: Var1Config, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``t_total x n`` bottom-level draws after discarding ``burn_in`` steps from ``b = 0``.

    Shocks are ``z @ L^T`` with ``z`` filled column-major (series by series).
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.coeff.shape[0]
    chol = np.linalg.cholesky(cfg.innov_cov)
    z = rng.standard_normal((n, cfg.burn_in + cfg.t_total)).T
    shocks = np.ascontiguousarray(z @ chol.T)
    states = _kernels.var1_recursion(np.ascontiguousarray(cfg.coeff), shocks)
    return states[cfg.burn_in:]


def simulate_var1(cfg: Var1Config, s: Optional[SummingMatrix] = None,
                  rng: Optional[np.random.Generator] = None) -> ObservationPanel:
    if s is None:
        s = SummingMatrix.from_matrix(np.eye(cfg.coeff.shape[0], dtype=np.int64))
    if s.n != cfg.coeff.shape[0]:
        raise ValueError(f"hierarchy has {s.n} bottom series but the VAR has {cfg.coeff.shape[0]}")
    return ObservationPanel.from_bottom(simulate_bottom(cfg, rng), s)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McDesign:
    hierarchy: HierarchySpec
    var1: Var1Config
    replications: int
    horizons: tuple = (1,)
    rho_grid: tuple = ()
    correlation_mode: str = ""
    sample_sizes: tuple = (101,)
    max_p: int = DEFAULT_MAX_P
    kind: str = "custom"

    def __post_init__(self):
        for name in ("horizons", "rho_grid", "sample_sizes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be positive")
        if not self.sample_sizes:
            raise ValueError("sample_sizes must be nonempty")
        for t in self.sample_sizes:
            # training rows after the test split must support the AR fit and EMinT-U
            if t - max(self.horizons) < self.max_p + 10:
                raise ValueError(f"T={t} leaves too few training rows for max_p={self.max_p}")
        if self.kind == "small":
            for r in self.rho_grid:
                small_design_cov(r)

    @property
    def seed(self) -> int:
        return self.var1.seed

    def cells(self) -> list[tuple[str, Var1Config]]:
        out = []
        if self.kind == "small":
            for rho in self.rho_grid:
                cov = small_design_cov(rho)
                for t in self.sample_sizes:
                    out.append((f"rho={rho!r}|T={t}", replace(self.var1, innov_cov=cov, t_total=t)))
        else:
            tag = f"corr={self.correlation_mode}|" if self.correlation_mode else ""
            for t in self.sample_sizes:
                out.append((f"{tag}T={t}", replace(self.var1, t_total=t)))
        return out


def small_design(replications: int, rho_grid: Sequence[float] = (0.0,), sample_sizes: Sequence[int] = (101,),
                 seed: int = 0, max_p: int = DEFAULT_MAX_P, burn_in: int = 100,
                 horizons: Sequence[int] = (1,)) -> McDesign:
    """Seven-series design: Total -> {A, B} -> two bottom series each."""
    var1 = Var1Config(small_design_coeff(), small_design_cov(0.0), max(sample_sizes), burn_in, seed)
    return McDesign(two_level([2, 2]), var1, replications, tuple(horizons), tuple(rho_grid), "",
                    tuple(sample_sizes), max_p, "small")


def large_design(replications: int, correlation_mode: str = "nonnegative", sample_sizes: Sequence[int] = (101,),
                 seed: int = 0, max_p: int = DEFAULT_MAX_P, burn_in: int = 100, between_eps: float = 0.1,
                 negate_fraction: float = 0.3, horizons: Sequence[int] = (1,)) -> McDesign:
    """43-series design: Total -> 6 groups -> 6 bottom series each.

    The innovation covariance is drawn once per design from a generator keyed
    on ``(seed, 1)`` and shared by every replication.
    """
    if correlation_mode not in ("nonnegative", "mixed"):
        raise ValueError("correlation_mode must be 'nonnegative' or 'mixed'")
    rng = np.random.default_rng([seed, 1])
    corr = block_correlation(6, 6, (0.2, 0.7), between_eps, rng)
    frac = negate_fraction if correlation_mode == "mixed" else 0.0
    cov = cov_from_correlation(corr, (math.sqrt(2.0), math.sqrt(6.0)), frac, rng)
    var1 = Var1Config(large_design_coeff(18), cov, max(sample_sizes), burn_in, seed)
    return McDesign(two_level([6] * 6), var1, replications, tuple(horizons), (), correlation_mode,
                    tuple(sample_sizes), max_p, "large")


@dataclass(frozen=True)
class ReplicationResult:
    """Squared-error sums for one replication: ``sq[h, method, sample, series]``."""

    sq: np.ndarray
    counts: np.ndarray  # [h, sample]
    maps: dict = field(default_factory=dict)


def replicate(cfg: Var1Config, s: SummingMatrix, max_p: int, horizons: Sequence[int],
              rng: np.random.Generator, keep_maps: bool = False) -> ReplicationResult:
    """Simulate, split off the test rows, fit base models, reconcile, score."""
    y = simulate_var1(cfg, s, rng).y
    n_test = max(horizons)
    train, test = y[:-n_test], y[-n_test:]
    models = [fit_ar(train[:, k], max_p, s.labels[k]) for k in range(s.m)]

    start1 = max_p
    fit1 = np.column_stack([insample_fitted(mod, train[:, k], 1, start1)[0] for k, mod in enumerate(models)])
    resid1 = train[start1:] - fit1
    w_diag = diagonal_covariance(resid1)
    w_sample = sample_covariance(resid1)
    w_shrink = shrink_covariance(resid1)
    fixed = {
        "bu": g_bottom_up(s),
        "ols": g_ols(s),
        "wls": g_wls(s, w_diag),
        "mint_sample": g_mint(s, w_sample),
        "mint_shrink": g_mint(s, w_shrink),
    }

    sq = np.zeros((len(horizons), len(MC_METHODS), 2, s.m))
    counts = np.zeros((len(horizons), 2), dtype=np.int64)
    kept = {}
    for hi, h in enumerate(horizons):
        start = max_p + h - 1
        if h == 1:
            fit_h = fit1
        else:
            fit_h = np.column_stack([insample_fitted(mod, train[:, k], h, start)[0] for k, mod in enumerate(models)])
        actual_in = train[start:]
        base_out = np.array([forecast(mod, train[:, k], h)[h - 1] for k, mod in enumerate(models)])
        actual_out = test[h - 1]
        maps = dict(fixed)
        maps["emint_u"] = g_emint_u(TrainingPanel(actual_in[:, s.m_star:], fit_h, actual_in, "insample", h=h))
        if keep_maps:
            kept[h] = maps
        for mi, name in enumerate(MC_METHODS):
            if name == "base":
                pred_in, pred_out = fit_h, base_out
            else:
                pred_in, pred_out = apply(maps[name], s, fit_h), apply(maps[name], s, base_out)
            sq[hi, mi, 0] = ((actual_in - pred_in) ** 2).sum(axis=0)
            sq[hi, mi, 1] = (actual_out - pred_out) ** 2
        counts[hi] = (actual_in.shape[0], 1)
    return ReplicationResult(sq, counts, kept)


@dataclass
class McResult:
    cells: list
    horizons: tuple
    methods: tuple
    labels: tuple
    levels: tuple
    sum_sq: np.ndarray  # [cell, h, method, sample, series]
    counts: np.ndarray  # [cell, h, sample]
    completed: np.ndarray  # [cell]
    skips: list  # per cell Counter of failure reasons

    def cell_label(self, c: int, hi: int) -> str:
        return f"{self.cells[c]}|h={self.horizons[hi]}"

    def mse(self, c: int, hi: int, sample: str) -> dict:
        si = SAMPLES.index(sample)
        cnt = self.counts[c, hi, si]
        return {m: self.sum_sq[c, hi, k, si] / cnt for k, m in enumerate(self.methods)}

    def tidy_rows(self):
        """Rows of (design_cell, method, series, level, sample, sum_sq_err, count)."""
        for c in range(len(self.cells)):
            for hi in range(len(self.horizons)):
                for k, meth in enumerate(self.methods):
                    for si, samp in enumerate(SAMPLES):
                        for j, lab in enumerate(self.labels):
                            yield (self.cell_label(c, hi), meth, lab, self.levels[j], samp,
                                   float(self.sum_sq[c, hi, k, si, j]), int(self.counts[c, hi, si]))


def _threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("RECON_THREADS", "1") or 1)
    return max(1, threads)


def run_monte_carlo(design: McDesign, threads: Optional[int] = None) -> McResult:
    """Run every design cell; replication ``r`` draws from ``default_rng(seed ^ r)``.

    Failing replications are skipped and counted by exception name. Sums are
    reduced with ``math.fsum`` in replication order, so the result does not
    depend on the worker count.
    """
    s = build_summing_matrix(design.hierarchy)
    cells = design.cells()
    horizons = design.horizons
    shape = (len(horizons), len(MC_METHODS), 2, s.m)
    sum_sq = np.zeros((len(cells), *shape))
    counts = np.zeros((len(cells), len(horizons), 2), dtype=np.int64)
    completed = np.zeros(len(cells), dtype=np.int64)
    skips = []
    n_workers = _threads(threads)

    for c, (_, cfg) in enumerate(cells):
        def one(r, cfg=cfg):
            try:
                return replicate(cfg, s, design.max_p, horizons, np.random.default_rng(design.seed ^ r))
            except (ReconError, np.linalg.LinAlgError) as exc:
                return type(exc).__name__

        if n_workers == 1:
            results = [one(r) for r in range(design.replications)]
        else:
            with ThreadPoolExecutor(n_workers) as pool:
                results = list(pool.map(one, range(design.replications)))
        ok = [res for res in results if isinstance(res, ReplicationResult)]
        skips.append(Counter(res for res in results if isinstance(res, str)))
        completed[c] = len(ok)
        if ok:
            stacked = np.stack([res.sq for res in ok])  # [rep, ...]
            flat = stacked.reshape(len(ok), -1)
            sum_sq[c] = np.array([math.fsum(flat[:, i]) for i in range(flat.shape[1])]).reshape(shape)
            counts[c] = np.sum([res.counts for res in ok], axis=0)
    return McResult([lab for lab, _ in cells], tuple(horizons), MC_METHODS, s.labels, s.levels,
                    sum_sq, counts, completed, skips)
