"""Time the transport kernels on both backends.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 8 16 32] [--repeat 3]

For each ``n`` it builds an ``n x n x n`` volume with ``2n`` time bins and
reports the best of ``--repeat`` runs of one forward and one adjoint application per backend,
the speedup, and the max relative difference between the two outputs.
"""

import argparse
import time

import numpy as np

from slct import _accel
from slct.forward import get_operator
from slct.grid import make_grid


def _grid(n):
    # nt = 2 nz keeps the voxel depth equal to the bin length
    return make_grid(n, n, n, 2 * n, 1.0, 1.0 / n)


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(n, repeat=3, seed=0):
    g = _grid(n)
    op = get_operator(g, True)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=g.volume_shape)
    t = rng.normal(size=g.transient_shape)
    rows = {}
    for name in ("numba", "numpy"):
        if name == "numba" and _accel.nb is None:
            continue
        _accel.set_backend(name)
        op.forward(u), op.adjoint(t)  # warm-up / JIT
        tf, f = _best(lambda: op.forward(u), repeat)
        ta, a = _best(lambda: op.adjoint(t), repeat)
        rows[name] = (tf, ta, f, a)
    return g, rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 24, 32])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    default = "numba" if _accel.use_numba() else "numpy"
    print(f"{'grid':>14} {'backend':>8} {'forward[s]':>11} {'adjoint[s]':>11} {'speedup':>8} {'maxrel':>9}")
    try:
        for n in args.sizes:
            g, rows = bench(n, args.repeat)
            shape = "x".join(map(str, g.volume_shape))
            ref = rows.get("numpy")
            for name, (tf, ta, f, a) in rows.items():
                speed = (ref[0] + ref[1]) / (tf + ta) if ref else float("nan")
                diff = max(
                    np.abs(f - ref[2]).max() / np.abs(ref[2]).max(),
                    np.abs(a - ref[3]).max() / np.abs(ref[3]).max(),
                )
                print(f"{shape:>14} {name:>8} {tf:11.4f} {ta:11.4f} {speed:8.1f} {diff:9.1e}")
    finally:
        _accel.set_backend(default)


if __name__ == "__main__":
    main()
