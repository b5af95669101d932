"""Time the compiled and numpy leapfrog kernels on the same problem.

Usage: ``python benchmarks/bench_kernels.py [--nodes 101 401] [--steps 2000] [--repeat 3]``
"""
import argparse
import time

import numpy as np

from coupledwave import kernels
from coupledwave.grid import build_grid
from coupledwave.solver import flux_bands, transpose_bands


def _problem(n, seed=0):
    g = build_grid(n, 1.0)
    rng = np.random.default_rng(seed)
    x = np.asarray(g.nodes)
    lower, diag, upper = flux_bands(np.ones(n), g.h)
    c = [np.ascontiguousarray(rng.uniform(-1, 1, n)) for _ in range(4)]
    y0 = [np.cos(np.pi * x), np.cos(2 * np.pi * x), np.zeros(n), np.zeros(n)]
    dt = 0.5 * g.h
    return (lower, diag, upper), c, y0, dt


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(n, steps, repeat):
    bands, c, y0, dt = _problem(n)
    rows = {}
    for name, mod in (("cython", kernels.compiled_backend), ("python", kernels.python_backend)):
        if mod is None:
            continue
        t_fwd, (Y, _) = _best(lambda: mod.leapfrog(*bands, *c, *y0, dt, steps), repeat)
        Y = np.ascontiguousarray(Y)
        G = np.ascontiguousarray(np.ones_like(Y))
        lt, dg, ut = transpose_bands(*bands)
        t_adj, grads = _best(lambda: mod.leapfrog_adjoint(lt, dg, ut, c[0], c[2], c[1], c[3], Y, G, dt),
                             repeat)
        rows[name] = (t_fwd, t_adj, Y, grads)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, nargs="+", default=[101, 401, 1601])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled backend not available; timing the numpy fallback only")
    print(f"{'nodes':>6} {'backend':>8} {'forward [s]':>12} {'adjoint [s]':>12} {'speedup':>8} {'max diff':>10}")
    for n in args.nodes:
        rows = bench(n, args.steps, args.repeat)
        ref = rows.get("python")
        for name, (tf, ta, Y, grads) in rows.items():
            speed = (ref[0] + ref[1]) / (tf + ta) if ref else float("nan")
            diff = max(float(np.max(np.abs(Y - ref[2]))),
                       *(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(grads, ref[3])))
            print(f"{n:>6} {name:>8} {tf:>12.4f} {ta:>12.4f} {speed:>8.1f} {diff:>10.1e}")


if __name__ == "__main__":
    main()
