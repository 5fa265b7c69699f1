"""Compare the numba and pure-numpy kernels of the 7-point solver.

Both backends are imported from ``perfhom.kernels`` and called directly,
so the comparison does not depend on ``PERFHOM_NUMBA``. The first numba
call (compilation) is excluded from the timings.

    python3 benchmarks/bench_kernels.py --sizes 33 65 129 --repeat 3
"""
import argparse
import math
import time

import numpy as np

from perfhom import kernels
from perfhom.numerics import Grid, NodeMask, StencilOperator


def _best(func, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        func()
        times.append(time.perf_counter() - start)
    return min(times)


def _problem(n):
    grid = Grid.cube(0, 1, n)
    op = StencilOperator(NodeMask.box(grid))
    x, y, z = grid.coords()
    b = np.ascontiguousarray(np.where(op.free != 0, np.sin(math.pi * x) * np.sin(math.pi * y) * z, 0.0))
    return op, b


def bench(n, repeat, tol):
    op, b = _problem(n)
    out = np.empty(b.shape)
    row = {"n": n}
    for name, apply, cg in (("numba", kernels.apply_operator_nb, kernels.cg_nb),
                            ("numpy", kernels.apply_operator_np, kernels.cg_np)):
        apply(b, op.free, op.shift, *op.coef, out)
        row[f"{name}_matvec_ms"] = 1e3 * _best(lambda: apply(b, op.free, op.shift, *op.coef, out), repeat)
        x = np.zeros(b.shape)
        iters = []

        def solve():
            iters.append(cg(b, x, op.free, op.shift, *op.coef, tol, 50000, False)[0])

        if name == "numba":
            solve()  # compile
        row[f"{name}_cg_ms"] = 1e3 * _best(solve, repeat)
        row[f"{name}_iters"] = iters[-1]
    row["matvec_speedup"] = row["numpy_matvec_ms"] / row["numba_matvec_ms"]
    row["cg_speedup"] = row["numpy_cg_ms"] / row["numba_cg_ms"]
    return row


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[33, 65, 129])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--tol", type=float, default=1e-8)
    args = parser.parse_args()
    header = f"{'n':>5} {'matvec nb':>10} {'matvec np':>10} {'x':>6} {'cg nb':>10} {'cg np':>10} {'x':>6} {'iters':>6}"
    print(header)
    for n in args.sizes:
        r = bench(n, args.repeat, args.tol)
        print(f"{n:5d} {r['numba_matvec_ms']:9.2f}ms {r['numpy_matvec_ms']:9.2f}ms {r['matvec_speedup']:6.1f}"
              f" {r['numba_cg_ms']:9.1f}ms {r['numpy_cg_ms']:9.1f}ms {r['cg_speedup']:6.1f} {r['numba_iters']:6d}")


if __name__ == "__main__":
    main()
