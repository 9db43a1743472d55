"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 20]

The first numba call (compilation) is excluded; every timing is the best
of ``--repeat`` runs.
"""
import argparse
import time

import numpy as np

from scdepth import _kernels as kn
from scdepth.evalkit import chain_poses
from scdepth.geometry import exp_twist


def best_of(fn, args, repeat):
    fn(*args)  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def cases(size, rng):
    img = rng.uniform(0, 1, (3, size, size))
    u = rng.uniform(0, size - 1, (size, size))
    v = rng.uniform(0, size - 1, (size, size))
    mask = rng.uniform(size=(size, size)) < 0.9
    yield "bilinear_sample", (img, u, v, mask)
    yield "box3_mean", (img,)
    yield "box3_adjoint", (rng.standard_normal((3, size - 2, size - 2)),)
    rel = [exp_twist(np.concatenate([rng.uniform(-0.01, 0.01, 3), [0.0, 0.0, -1.0]]))
           for _ in range(1000)]
    gt = chain_poses(rel)
    m = np.ascontiguousarray(gt.matrices())
    pred = m.copy()
    pred[:, :3, 3] *= 1.01
    yield "segment_errors", (m, pred, np.ascontiguousarray(gt.distances()),
                             np.arange(100.0, 900.0, 100.0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not kn.HAS_NUMBA:
        print("numba is not installed; only the numpy path is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, a in cases(args.size, rng):
        t_np = best_of(getattr(kn, name + "_numpy"), a, args.repeat)
        t_nb = best_of(getattr(kn, name + "_numba"), a, args.repeat)
        print(f"{name:<16} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
