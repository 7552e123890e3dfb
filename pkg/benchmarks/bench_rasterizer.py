"""Compare the numba and pure-numpy compositing backends on forward + backward passes.

    python benchmarks/bench_rasterizer.py [--sizes 64,128] [--repeats 3]
"""

import argparse
import time

import numpy as np

from texsplat._jit import HAS_NUMBA
from texsplat.rasterizer import backward, render
from texsplat.synthetic import build_fixture


def bench(backend, scene, cam, repeats):
    render(scene, cam, backend=backend)  # warm-up (jit compile on first call)
    g = np.ones((cam.height, cam.width, 3))
    fwd, bwd = [], []
    for _ in range(repeats):
        t = time.perf_counter()
        out = render(scene, cam, backend=backend)
        fwd.append(time.perf_counter() - t)
        t = time.perf_counter()
        backward(scene, cam, out.channel, g, output=out, backend=backend)
        bwd.append(time.perf_counter() - t)
    return min(fwd), min(bwd), out.image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="64,128")
    ap.add_argument("--gaussians", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    backends = ["numba", "numpy"] if HAS_NUMBA else ["numpy"]
    print(f"{'size':>6} {'backend':>8} {'forward ms':>11} {'backward ms':>12}")
    for size in (int(s) for s in args.sizes.split(",")):
        scene, cams = build_fixture("planes", args.gaussians, 1, size, size)
        images = {}
        for b in backends:
            f, bw, images[b] = bench(b, scene, cams[0], args.repeats)
            print(f"{size:>6} {b:>8} {1e3 * f:>11.2f} {1e3 * bw:>12.2f}")
        if len(images) == 2:
            print(f"{'':>6} max |numba - numpy| = {np.abs(images['numba'] - images['numpy']).max():.2e}")


if __name__ == "__main__":
    main()
