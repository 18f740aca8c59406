"""Compare the numba and numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (JIT compile or cache load) before timing.
Also times one Monte Carlo replication end to end on the current backend.
"""
import argparse
import time

import numpy as np

from hts_recon import _kernels
from hts_recon.hierarchy import build_summing_matrix
from hts_recon.simulate import large_design, replicate, small_design


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    a = 0.5 * np.eye(36) + 0.01 * rng.standard_normal((36, 36))
    shocks = rng.standard_normal((5000, 36))
    xs = rng.standard_normal((500, 43))
    xs = (xs - xs.mean(0)) / xs.std(0, ddof=1)
    y = np.cumsum(rng.standard_normal(2000)) * 0.01 + rng.standard_normal(2000)
    coefs = np.array([0.5, -0.2, 0.1, 0.05, -0.02])
    return {
        "var1_recursion (5000 x 36)": ("var1_recursion", (a, shocks)),
        "ss_sums (500 x 43)": ("ss_sums", (np.ascontiguousarray(xs),)),
        "ar_fitted (T=2000, p=5, h=3)": ("ar_fitted", (y, 0.1, coefs, 3, 7)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"{'kernel':32}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for label, (name, inputs) in cases(rng).items():
        f_np = getattr(_kernels, f"{name}_np")
        f_jit = getattr(_kernels, f"{name}_jit")
        t_np = best_of(lambda: f_np(*inputs), args.repeat)
        t_jit = best_of(lambda: f_jit(*inputs), args.repeat)
        diff = np.max(np.abs(np.subtract(f_np(*inputs), f_jit(*inputs))))
        print(f"{label:32}{1e3 * t_np:12.3f}{1e3 * t_jit:12.3f}{t_np / t_jit:10.1f}{diff:14.2e}")

    print(f"\nend-to-end replication on backend={_kernels.backend()} (RECON_NO_NUMBA=1 to switch)")
    for design in (small_design(1, (0.0,), (501,)), large_design(1, "nonnegative", (501,))):
        s = build_summing_matrix(design.hierarchy)
        cfg = design.cells()[0][1]
        t = best_of(lambda: replicate(cfg, s, design.max_p, design.horizons, np.random.default_rng(0)), args.repeat)
        print(f"  {design.kind:6} m={s.m:3d}: {1e3 * t:9.2f} ms")


if __name__ == "__main__":
    main()
