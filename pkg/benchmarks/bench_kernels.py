"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Both variants are imported directly, so the WISEALE_DISABLE_NUMBA flag does
not matter here. The first numba call is excluded (compilation).
"""

import argparse
import time

import numpy as np

from wiseale import kernels
from wiseale._accel import HAVE_NUMBA


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    mu = rng.normal(size=(64, 8))
    lv = rng.uniform(-2, 1, size=(64, 8))
    z = rng.normal(size=(20000, 4))
    mu4, lv4 = rng.normal(size=(8, 4)), rng.uniform(-2, 1, size=(8, 4))
    p, g = rng.normal(size=(256, 256)), rng.normal(size=(256, 256))
    m, v = np.zeros_like(p), np.zeros_like(p)
    adam = (p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return [
        ("kl_ub_value_grad M=64 d=8", "kl_ub_value_grad", (mu, lv)),
        ("pairwise_log_overlap M=64 d=8", "pairwise_log_overlap", (mu, lv)),
        ("mixture_log_density n=20000 M=8 d=4", "mixture_log_density", (z, mu4, lv4)),
        ("adam_update 256x256", "adam_update", adam),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, name, a in cases(rng):
        t_np = best_of(getattr(kernels, name + "_np"), a, args.repeat)
        if HAVE_NUMBA:
            t_nb = best_of(getattr(kernels, name + "_nb"), a, args.repeat)
            print(f"{label:40s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{label:40s} {t_np * 1e3:10.3f} {'n/a':>10s}")


if __name__ == "__main__":
    main()
