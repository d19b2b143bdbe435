"""Compare the compiled and pure-Python aggregation kernels.

Run as ``python3 -m coopgnn.bench [--sizes 1000,10000,100000] [--dim 32]``.
Each row times the forward gather and its backward on one random graph and
checks the two backends agree to 1e-12.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import kernels
from .harness import random_graph


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def compare_backends(sizes, dim: int = 32, repeats: int = 5, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    names = [n for n in ("compiled", "python") if n in kernels.BACKENDS]
    rows = []
    for m in sizes:
        g = random_graph(int(m), rng)
        w = rng.random(len(g.src))
        h = rng.standard_normal((g.num_nodes, dim))
        grad = rng.standard_normal((g.num_nodes, dim))
        row = {"num_edges": g.num_edges, "num_nodes": g.num_nodes}
        outputs = {}
        for name in names:
            k = kernels.BACKENDS[name]
            outputs[name] = k.gather_sum(g.indptr, g.src, w, h)
            row[f"{name}_forward"] = _best_of(lambda: k.gather_sum(g.indptr, g.src, w, h), repeats)
            row[f"{name}_backward"] = _best_of(
                lambda: k.gather_sum_backward(g.indptr, g.src, w, h, grad, True), repeats)
        if len(outputs) == 2:
            diff = np.max(np.abs(outputs["compiled"] - outputs["python"]))
            row["max_abs_diff"] = float(diff)
            row["speedup_forward"] = row["python_forward"] / row["compiled_forward"]
            row["speedup_backward"] = row["python_backward"] / row["compiled_backward"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="python3 -m coopgnn.bench", description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="1000,10000,100000")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    rows = compare_backends([int(float(s)) for s in args.sizes.split(",")], args.dim, args.repeats)
    print(f"backends available: {', '.join(kernels.BACKENDS)} (active: {kernels.backend_name()})")
    header = f"{'edges':>8} {'backend':>9} {'forward ms':>11} {'backward ms':>12}"
    print(header)
    for row in rows:
        for name in ("compiled", "python"):
            if f"{name}_forward" in row:
                print(f"{row['num_edges']:>8} {name:>9} {1e3 * row[f'{name}_forward']:>11.3f} "
                      f"{1e3 * row[f'{name}_backward']:>12.3f}")
        if "speedup_forward" in row:
            print(f"{'':>8} {'speedup':>9} {row['speedup_forward']:>10.2f}x {row['speedup_backward']:>11.2f}x"
                  f"   max |diff| {row['max_abs_diff']:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
