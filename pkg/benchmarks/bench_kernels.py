"""Compiled vs numpy kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per call for each backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from ooolab import _kernels_py, kernels
from ooolab.synthdata import DEFAULT_SPACE, sample_factors


def cases():
    rng = np.random.default_rng(0)
    codes = sample_factors(rng, DEFAULT_SPACE, 4096).astype(np.int64)
    n = 3072 * 256
    p, g = rng.standard_normal(n), rng.standard_normal(n)
    m, v = np.zeros(n), np.zeros(n)
    logits = rng.standard_normal((64, 3072))
    x = (rng.random((64, 3072)) < 0.3).astype(np.float64)
    return {
        "render_masks (4096 images)": lambda k: k.render_masks(codes),
        "adam_update (786k params)": lambda k: k.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8),
        "bernoulli_logit_terms (64x3072)": lambda k: k.bernoulli_logit_terms(logits, x),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; only the numpy backend can be timed")
    print(f"{'kernel':34s} {'numpy ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        if kernels.BACKEND == "compiled":
            t_c = min(timeit.repeat(lambda: fn(kernels), number=1, repeat=args.repeat))
            print(f"{name:34s} {t_py * 1e3:10.2f} {t_c * 1e3:12.2f} {t_py / t_c:7.1f}x")
        else:
            print(f"{name:34s} {t_py * 1e3:10.2f} {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
