"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time for each backend
and the speed-up. Inputs are sized like a single fitting iteration.
"""

import argparse
import time

import numpy as np

from gmshape import _kernels_py
from gmshape.camera import Camera, paraperspective_project
from gmshape.kernels import compiled_module
from gmshape.mixture import random_mixture


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    m = random_mixture(16, rng, spread=0.3, scale=(0.05, 0.15))
    pts = rng.normal(scale=0.3, size=(4096, 3))
    logw = np.log(m.weights)
    chol = np.ascontiguousarray(m.precision_chol)
    cam = Camera.look_at([0.0, 0.3, 1.0])
    m2 = paraperspective_project(m, cam)
    target = (rng.random((cam.height, cam.width)) > 0.5).astype(np.float64)
    tri = rng.uniform(0, 128, size=(2000, 3, 2))
    a, b = rng.random((1024, 3)), rng.random((1024, 3))
    C = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    pot = rng.normal(scale=0.1, size=1024)
    return {
        "log_mixture_pdf (4096 pts, K=16)": lambda k: k.log_mixture_pdf(pts, logw, m.means, chol),
        "nll_grad (4096 pts, K=16)": lambda k: k.nll_grad(pts, logw, m.means, chol),
        "silhouette_loss (128x128, K=16)": lambda k: k.silhouette_loss(
            m2.weights, m2.means, m2.covariances, target, 10_000, 100.0, True),
        "rasterize_triangles (2000 tris)": lambda k: k.rasterize_triangles(tri, 128, 128),
        "softmin_rows (1024x1024)": lambda k: k.softmin_rows(C, pot, 0.01),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    compiled = compiled_module()
    if compiled is None:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'kernel':<36}{'numpy [ms]':>12}{'compiled [ms]':>15}{'speed-up':>10}")
    for name, call in cases(np.random.default_rng(args.seed)).items():
        t_py = best_time(lambda: call(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:<36}{1e3 * t_py:>12.2f}{'-':>15}{'-':>10}")
            continue
        t_c = best_time(lambda: call(compiled), args.repeat)
        print(f"{name:<36}{1e3 * t_py:>12.2f}{1e3 * t_c:>15.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
