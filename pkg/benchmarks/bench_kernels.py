"""Time the compiled hot kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; prints one CSV row per
(kernel, size, implementation).
"""

import argparse
import sys
import timeit

import numpy as np

from tilegeo import _backend, _kernels_py
from tilegeo.geometry import random_locations


def cases(size):
    locs = random_locations(size, 0)
    xs, ys = np.ascontiguousarray(locs.xs), np.ascontiguousarray(locs.ys)
    d = np.abs(np.random.default_rng(0).normal(size=size * size)) * 0.3
    rng = np.random.default_rng(1)
    m = rng.normal(size=(size, size))
    spd = np.asfortranarray(m @ m.T + size * np.eye(size))
    out = np.empty((size, size), order="F")

    def matern_block(k, nu):
        return lambda: k.matern_block(xs, ys, xs, ys, 0, 6371.0, 1.0, 0.1, nu, out, True)

    return {
        "matern_block_nu0.5": lambda k: matern_block(k, 0.5),
        "matern_block_nu1.3": lambda k: matern_block(k, 1.3),
        "matern_values_nu2.2": lambda k: (lambda: k.matern_values(d, 1.0, 0.1, 2.2)),
        "bessel_k_nu0.7": lambda k: (lambda: k.bessel_k(0.7, d + 1e-3)),
        "potrf_tile": lambda k: (lambda: k.potrf_tile(spd.copy(order="F"))),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="100,320", help="comma separated tile sizes")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    impls = [("python", _kernels_py)]
    if _backend.COMPILED:
        impls.insert(0, ("compiled", _backend.kernels))
    else:
        print("compiled extension unavailable; timing fallback only", file=sys.stderr)
    print("kernel,size,impl,best_seconds,speedup")
    for size in (int(s) for s in args.sizes.split(",")):
        for name, make in cases(size).items():
            times = {}
            for label, mod in impls:
                fn = make(mod)
                fn()
                times[label] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            for label, t in times.items():
                print(f"{name},{size},{label},{t:.6f},{times['python'] / t:.2f}")


if __name__ == "__main__":
    main()
