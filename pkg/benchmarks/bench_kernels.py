"""Time the numba and numpy backends of the per-point radial kernels.

    python benchmarks/bench_kernels.py [--points N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from drheo import kernels, rheology

MODELS = {
    "power_law p=2.5": rheology.make_model("power_law", p=2.5),
    "carreau n=0.5": rheology.make_model("carreau", mu=0.01, mu1=0.1, mu2=1.0, p=1.5),
    "bingham": rheology.make_model("bingham_regularized", mu=0.01, tau0=0.05, eps_reg=0.05),
    "power_law p=1.6 smoothed": rheology.make_model("power_law", p=1.6, smoothing=0.5),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=32 * 32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    r = np.abs(rng.standard_normal(args.points)) * 3
    backends = [kernels.numpy_backend]
    if kernels.numba_backend is not None:
        backends.append(kernels.numba_backend)
    print(f"{'kernel':<42}" + "".join(f"{b.name:>12}" for b in backends) + "   (ms per call)")
    for label, m in MODELS.items():
        for op in ("radial_eval", "radial_conjugate"):
            row = f"{label + ' ' + op:<42}"
            for b in backends:
                fn = getattr(b, op)
                fn(m.code, m.params, r)  # compile / warm up
                t = min(timeit.repeat(lambda: fn(m.code, m.params, r), number=3,
                                      repeat=args.repeat)) / 3
                row += f"{1e3 * t:12.3f}"
            print(row)


if __name__ == "__main__":
    main()
