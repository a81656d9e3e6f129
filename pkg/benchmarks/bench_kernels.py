"""Time the compiled point kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--points 1024]
"""
import argparse
import timeit

import numpy as np

from pic3d import _kernels_py
from pic3d import kernels


def cases(n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n, 3))
    other = rng.uniform(-1, 1, size=(n, 3))
    centers = pts[:64]
    return {
        "fps(64)": lambda impl: impl.fps(pts, 64, 0),
        "knn(64x32)": lambda impl: impl.knn(pts, centers, 32),
        "nearest(nxn)": lambda impl: impl.nearest(pts, other),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=1024)
    args = ap.parse_args(argv)
    impls = {"python": _kernels_py}
    if kernels.cython_impl is not None:
        impls["cython"] = kernels.cython_impl
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases(args.points).items():
        times = {}
        for name, impl in impls.items():
            fn(impl)
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
        print(f"{label:<14}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values()) + f"{speed:>10}")


if __name__ == "__main__":
    main()
