"""Independent reference implementations used only by the tests.

Each one takes a different route from the package code: explicit KKT systems
instead of closed forms, loops instead of matrix identities, Kronecker solves
instead of scipy's Lyapunov routine.
"""
import numpy as np


def kkt_projection(s, w):
    """argmin_G tr(S G W G^T S^T) s.t. G S = I, one row of G at a time.

    Row i minimises g^T W g subject to S^T g = e_i:
        [2W  S][g ]   [0  ]
        [S^T 0][mu] = [e_i]
    """
    s = np.asarray(s, float)
    m, n = s.shape
    kkt = np.zeros((m + n, m + n))
    kkt[:m, :m] = 2.0 * np.asarray(w, float)
    kkt[:m, m:] = s
    kkt[m:, :m] = s.T
    g = np.empty((n, m))
    for i in range(n):
        rhs = np.zeros(m + n)
        rhs[m + i] = 1.0
        g[i] = np.linalg.solve(kkt, rhs)[:m]
    return g


def two_pass_covariance(x):
    x = np.asarray(x, float)
    t, m = x.shape
    mean = [sum(x[k, j] for k in range(t)) / t for j in range(m)]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = sum((x[k, i] - mean[i]) * (x[k, j] - mean[j]) for k in range(t)) / (t - 1)
    return out


def shrinkage_lambda_loop(x):
    x = np.asarray(x, float)
    t, m = x.shape
    xc = x - x.mean(axis=0)
    xs = xc / np.sqrt((xc ** 2).sum(axis=0) / (t - 1))
    num = den = 0.0
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            w = xs[:, i] * xs[:, j]
            wb = w.mean()
            num += t / (t - 1) ** 3 * ((w - wb) ** 2).sum()
            den += (t / (t - 1) * wb) ** 2
    return 1.0 if den == 0 else min(1.0, max(0.0, num / den))


def ar_recursion(intercept, coefs, history, h):
    vals = list(history)
    out = []
    for _ in range(h):
        nxt = intercept + sum(c * vals[-1 - i] for i, c in enumerate(coefs))
        vals.append(nxt)
        out.append(nxt)
    return out


def lyapunov_kron(a, sigma):
    """vec(G) = (I - A kron A)^{-1} vec(Sigma)."""
    n = a.shape[0]
    vec = np.linalg.solve(np.eye(n * n) - np.kron(a, a), sigma.reshape(-1))
    return vec.reshape(n, n)


def mse_loop(actuals, preds):
    t, m = actuals.shape
    return np.array([sum((actuals[k, j] - preds[k, j]) ** 2 for k in range(t)) / t for j in range(m)])


def random_spd(m, rng, ridge=0.1):
    a = rng.standard_normal((m, m))
    w = a @ a.T / m + ridge * np.eye(m)
    d = np.exp(rng.uniform(-1, 1, m))
    return d[:, None] * w * d[None, :]
