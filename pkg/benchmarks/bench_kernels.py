"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--threads 4]
"""

import argparse
import os
import timeit

import numpy as np

from marginalflow import kernels


def cases(rng):
    table = rng.normal(size=(3, 64 ** 3))
    pts = rng.uniform(0.0, 63.0, (200_000, 3))
    a, b = rng.normal(size=(3000, 3)), rng.normal(size=(3000, 3))
    paths = np.arange(200_000, dtype=np.uint64)
    return {
        "counter_normals 200k x 3": lambda k: k.counter_normals(7, paths, 11, 3, threads=THREADS),
        "interp_multilinear 64^3 @ 200k": lambda k: k.interp_multilinear(
            table, [0.0] * 3, [1.0] * 3, [64] * 3, pts, threads=THREADS),
        "mean_pairwise_distance 3k x 3k": lambda k: k.mean_pairwise_distance(a, b, threads=THREADS),
    }


def main():
    global THREADS
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    THREADS = args.threads
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in backends) + "     speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        best = {n: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
                for n, k in backends.items()}
        row = f"{name:34s}" + "".join(f"{best[n] * 1e3:10.1f}ms" for n in backends)
        if "cython" in best:
            row += f"{best['python'] / best['cython']:11.1f}x"
        print(row)


THREADS = 1

if __name__ == "__main__":
    main()
