"""Hot inner loops, each with a numba-compiled and a pure-numpy implementation.

The numba path is used when numba imports and ``RECON_NO_NUMBA`` is unset (or
``0``). Set ``RECON_NO_NUMBA=1`` to force the numpy fallback. Both paths are
exported under explicit names (``*_jit`` / ``*_np``) so tests and the benchmark
can compare them directly; results agree to rounding, not bit for bit.

``ss_sums`` always dispatches to numpy: it reduces to two matrix products and
BLAS beats the compiled loop there.
"""
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("RECON_NO_NUMBA", "0").lower() in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# VAR(1) recursion  b_t = A b_{t-1} + e_t,  b_{-1} = 0
# ---------------------------------------------------------------------------

def var1_recursion_np(coeff, shocks):
    steps, n = shocks.shape
    out = np.empty((steps, n))
    prev = np.zeros(n)
    for t in range(steps):
        prev = coeff @ prev + shocks[t]
        out[t] = prev
    return out


# ---------------------------------------------------------------------------
# Schafer-Strimmer sums on standardised data
#   returns (sum_{i != j} var(r_ij), sum_{i != j} r_ij^2)
# ---------------------------------------------------------------------------

def ss_sums_np(xs):
    t = xs.shape[0]
    wbar = xs.T @ xs / t
    sq = xs * xs
    # sum_k (w_kij - wbar_ij)^2 = sum_k x_ki^2 x_kj^2 - T wbar_ij^2
    dev = sq.T @ sq - t * wbar * wbar
    var_r = t / (t - 1.0) ** 3 * dev
    r = t / (t - 1.0) * wbar
    off = ~np.eye(xs.shape[1], dtype=bool)
    return float(var_r[off].sum()), float((r[off] ** 2).sum())


# ---------------------------------------------------------------------------
# Iterated h-step AR predictions from every admissible origin
#   fitted[k] predicts y[start + k] from y[.. start + k - h]
# ---------------------------------------------------------------------------

def ar_fitted_np(y, intercept, coefs, h, start):
    p = coefs.shape[0]
    targets = np.arange(start, y.shape[0])
    origins = targets - h
    if p == 0:
        return np.full(targets.shape[0], intercept)
    hist = np.empty((targets.shape[0], p))
    for i in range(p):
        hist[:, i] = y[origins - i]
    pred = None
    for _ in range(h):
        pred = intercept + hist @ coefs
        hist = np.concatenate((pred[:, None], hist[:, :-1]), axis=1)
    return pred


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def var1_recursion_jit(coeff, shocks):
        steps, n = shocks.shape
        out = np.empty((steps, n))
        prev = np.zeros(n)
        cur = np.empty(n)
        for t in range(steps):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += coeff[i, j] * prev[j]
                cur[i] = acc + shocks[t, i]
            for i in range(n):
                prev[i] = cur[i]
                out[t, i] = cur[i]
        return out

    @njit(cache=True, nogil=True)
    def ss_sums_jit(xs):
        t, m = xs.shape
        # one row-major pass accumulating sum x_i x_j and sum x_i^2 x_j^2 for i < j
        s1 = np.zeros((m, m))
        s2 = np.zeros((m, m))
        for k in range(t):
            row = xs[k]
            for i in range(m):
                xi = row[i]
                for j in range(i + 1, m):
                    w = xi * row[j]
                    s1[i, j] += w
                    s2[i, j] += w * w
        f_r = t / (t - 1.0)
        f_v = t / (t - 1.0) ** 3
        sum_var = 0.0
        sum_sq = 0.0
        for i in range(m):
            for j in range(i + 1, m):
                wbar = s1[i, j] / t
                r = f_r * wbar
                sum_var += 2.0 * f_v * (s2[i, j] - t * wbar * wbar)
                sum_sq += 2.0 * r * r
        return sum_var, sum_sq

    @njit(cache=True, nogil=True)
    def ar_fitted_jit(y, intercept, coefs, h, start):
        p = coefs.shape[0]
        n_out = y.shape[0] - start
        out = np.empty(n_out)
        buf = np.empty(p + h)
        for k in range(n_out):
            origin = start + k - h
            # buf[p - 1 - i] holds y[origin - i]; forecasts append after it
            for i in range(p):
                buf[p - 1 - i] = y[origin - i]
            for j in range(h):
                acc = intercept
                for i in range(p):
                    acc += coefs[i] * buf[p - 1 + j - i]
                buf[p + j] = acc
            out[k] = buf[p + h - 1]
        return out

else:  # pragma: no cover
    var1_recursion_jit = var1_recursion_np
    ss_sums_jit = ss_sums_np
    ar_fitted_jit = ar_fitted_np


# ss_sums reduces to two matrix products, where BLAS beats the compiled loop
# (see benchmarks/bench_kernels.py), so it stays on numpy under either flag.
ss_sums = ss_sums_np
if USE_NUMBA:
    var1_recursion = var1_recursion_jit
    ar_fitted = ar_fitted_jit
else:
    var1_recursion = var1_recursion_np
    ar_fitted = ar_fitted_np


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
