"""Benchmark the hot kernels on both backends: ``python -m deformrecon.bench``.

Times the numba path (when importable) against the pure-numpy fallback on
the three dispatched kernels; results are wall-clock medians over repeats,
after a warmup call that absorbs JIT compilation.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import backend, kernels
from .spatial import build_index


def _time(fn, repeats: int) -> float:
    fn()  # warmup (JIT compile, cache touch)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _bilinear_case(scale: float):
    rng = np.random.default_rng(0)
    n = max(int(2_000_000 * scale), 1000)
    grid = np.ascontiguousarray(rng.normal(size=(16, 16, 2)))
    xs = rng.uniform(-1, 17, size=n)
    ys = rng.uniform(-1, 17, size=n)
    return {
        "numpy": lambda: kernels._bilinear_numpy(grid, xs, ys),
        "numba": lambda: kernels._bilinear_numba(grid, xs, ys),
    }


def _kd_case(scale: float):
    rng = np.random.default_rng(1)
    n_pts = max(int(100_000 * scale), 500)
    n_q = max(int(20_000 * scale), 200)
    pts = rng.normal(size=(n_pts, 3))
    idx = build_index(pts, leaf_size=16)
    queries = np.ascontiguousarray(rng.normal(size=(n_q, 3)))
    args = (idx.points, idx._axis, idx._value, idx._left, idx._right,
            idx._start, idx._end, idx._perm, queries)
    return {
        "numpy": lambda: kernels._kd_query_numpy(*args),
        "numba": lambda: kernels._kd_query_numba(*args),
    }


def _mc_case(scale: float):
    n = max(int(96 * scale ** (1 / 3)), 16)
    axes = np.linspace(-1, 1, n + 1)
    xx, yy, zz = np.meshgrid(axes, axes, axes, indexing="ij")
    values = np.sqrt(xx**2 + yy**2 + zz**2) - 0.5
    return {
        "numpy": lambda: kernels._mc_cells_numpy(values, n),
        "numba": lambda: kernels._mc_cells_numba(values, n, kernels.TRI_TABLE,
                                                 kernels.EDGE_CORNERS,
                                                 kernels.CORNER_OFFSETS),
    }


CASES = {
    "bilinear": _bilinear_case,
    "kd_query": _kd_case,
    "marching_cubes": _mc_case,
}


def run_benchmarks(scale: float = 1.0, repeats: int = 5) -> list[dict]:
    rows = []
    for name, case in CASES.items():
        fns = case(scale)
        row = {"kernel": name, "numpy_s": _time(fns["numpy"], repeats)}
        if backend.USE_NUMBA:
            row["numba_s"] = _time(fns["numba"], repeats)
            row["speedup"] = row["numpy_s"] / row["numba_s"]
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'kernel':<16} {'numpy':>10} {'numba':>10} {'speedup':>8}"]
    for r in rows:
        numba_s = f"{r['numba_s'] * 1e3:.2f}ms" if "numba_s" in r else "-"
        speed = f"{r['speedup']:.1f}x" if "speedup" in r else "-"
        lines.append(f"{r['kernel']:<16} {r['numpy_s'] * 1e3:>8.2f}ms {numba_s:>10} {speed:>8}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="hot-kernel backend benchmark")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="problem-size multiplier (default 1.0)")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)
    print(f"active backend: {backend.backend_name()}")
    if not backend.USE_NUMBA:
        print("numba unavailable or disabled; timing the numpy path only")
    print(format_table(run_benchmarks(scale=args.scale, repeats=args.repeats)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
