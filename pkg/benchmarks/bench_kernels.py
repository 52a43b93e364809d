"""Time the numba-jitted hot kernels against the pure-numpy fallback.

Run directly: python benchmarks/bench_kernels.py
The numpy path is what CORRATTACK_NUMBA=0 selects at import time.
"""

import time

import numpy as np

from corrattack import _kernels

SIZES = [
    ("stage window vs candidates (b=8)", 17, 48),
    ("stage window vs candidates (b=2)", 69, 768),
    ("imagenet-scale candidates (b=4)", 847, 9408),
]

EI_SIZES = [768, 9408, 37632]

REPEATS = 20


def time_call(fn, *args):
    fn(*args)  # warm-up (and JIT compile for the numba path)
    best = float("inf")
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    if not _kernels.NUMBA_ENABLED:
        print("numba path disabled (CORRATTACK_NUMBA=0 or numba missing);")
        print("only the numpy fallback can be timed in this process.")
    print(f"{'kernel':45s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    ls = np.array([0.1, 0.1, 0.1, 0.5])
    for label, n, m in SIZES:
        za = rng.random((n, 4))
        zb = rng.random((m, 4))
        t_np = time_call(_kernels.matern52_cross_numpy, za, zb, ls, 1.0)
        if _kernels.NUMBA_ENABLED:
            t_nb = time_call(_kernels.matern52_cross_numba, za, zb, ls, 1.0)
            out_np = _kernels.matern52_cross_numpy(za, zb, ls, 1.0)
            out_nb = _kernels.matern52_cross_numba(za, zb, ls, 1.0)
            assert np.allclose(out_np, out_nb, rtol=1e-12)
            print(f"matern52 {label:36s} {t_np*1e3:9.3f}ms {t_nb*1e3:9.3f}ms {t_np/t_nb:7.2f}x")
        else:
            print(f"matern52 {label:36s} {t_np*1e3:9.3f}ms {'-':>10s} {'-':>8s}")
    for m in EI_SIZES:
        mean = rng.normal(size=m)
        var = np.abs(rng.normal(size=m)) + 1e-9
        t_np = time_call(_kernels.ei_batch_numpy, mean, var, 0.0)
        label = f"ei_batch over {m} candidates"
        if _kernels.NUMBA_ENABLED:
            t_nb = time_call(_kernels.ei_batch_numba, mean, var, 0.0)
            assert np.allclose(
                _kernels.ei_batch_numpy(mean, var, 0.0),
                _kernels.ei_batch_numba(mean, var, 0.0),
                rtol=1e-12,
            )
            print(f"{label:45s} {t_np*1e3:9.3f}ms {t_nb*1e3:9.3f}ms {t_np/t_nb:7.2f}x")
        else:
            print(f"{label:45s} {t_np*1e3:9.3f}ms {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
