"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 256]

Both backends are run on identical inputs; outputs are compared before timing.
"""

import argparse
import math
import timeit

import numpy as np

from omnisal import _pykernels

try:
    from omnisal import _ckernels
except ImportError:
    _ckernels = None


def _cases(size: int, rng: np.random.Generator) -> dict:
    h, w = size, 2 * size
    img = np.ascontiguousarray(rng.random((h, w, 3)))
    n = 18 * 224 * 224 // 4
    rows = rng.uniform(0, h - 1, n)
    cols = rng.uniform(-w, 2 * w, n)

    m = h * w
    index = rng.integers(0, m, n).astype(np.int64)
    values = np.ascontiguousarray(rng.random((n, 3)))
    weights = rng.random(n)

    # slow random walk in gaze direction, 30 s at 120 Hz
    k = 3600
    t = np.arange(k) / 120.0
    lat = np.cumsum(rng.normal(0, 0.002, k))
    lon = np.cumsum(rng.normal(0, 0.002, k))
    xyz = np.ascontiguousarray(np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], 1))
    cos_thresh = math.cos(math.radians(1.5))

    def scatter(mod):
        out = np.zeros((m, 3))
        wout = np.zeros(m)
        mod.scatter_add(index, values, weights, out, wout)
        return out, wout

    return {
        "bilinear_sample": lambda mod: mod.bilinear_sample(img, rows, cols, True),
        "scatter_add": scatter,
        "idt_scan": lambda mod: mod.idt_scan(xyz, t, cos_thresh, 0.1),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, list):
        return a == b
    return bool(np.allclose(a, b, rtol=0, atol=1e-12))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=256, help="ERP height")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cases = _cases(args.size, np.random.default_rng(args.seed))
    print(f"{'kernel':<16s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}  agree")
    for name, run in cases.items():
        py = min(timeit.repeat(lambda: run(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<16s} {py:10.2f} {'n/a':>10s} {'':>8s}  -")
            continue
        agree = _same(run(_pykernels), run(_ckernels))
        cy = min(timeit.repeat(lambda: run(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16s} {py:10.2f} {cy:10.2f} {py / cy:7.1f}x  {agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
