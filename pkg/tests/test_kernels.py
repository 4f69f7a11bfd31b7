import os
import subprocess
import sys

import numpy as np
import pytest

from deformrecon import backend, kernels
from deformrecon.spatial import build_index


needs_numba = pytest.mark.skipif(not backend.USE_NUMBA, reason="numba backend inactive")


def test_backend_reports_name():
    assert backend.backend_name() in ("numba", "numpy")


def test_env_flag_selects_numpy_backend():
    code = (
        "from deformrecon import backend; "
        "print(backend.backend_name(), backend.USE_NUMBA)"
    )
    env = dict(os.environ, DEFORMRECON_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "False"]


def test_env_flag_rejects_garbage():
    code = "import deformrecon.backend"
    env = dict(os.environ, DEFORMRECON_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "DEFORMRECON_BACKEND" in out.stderr


@needs_numba
def test_bilinear_paths_bit_identical():
    rng = np.random.default_rng(0)
    for _ in range(5):
        h, w, c = rng.integers(2, 9, size=3)
        grid = np.ascontiguousarray(rng.normal(size=(h, w, c)))
        xs = rng.uniform(-2, w + 2, size=200)
        ys = rng.uniform(-2, h + 2, size=200)
        a = kernels._bilinear_numpy(grid, xs, ys)
        b = kernels._bilinear_numba(grid, xs, ys)
        assert np.array_equal(a, b)


@needs_numba
def test_kd_query_paths_bit_identical():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(500, 3))
    idx = build_index(pts, leaf_size=8)
    queries = np.ascontiguousarray(rng.normal(size=(80, 3)))
    args = (idx.points, idx._axis, idx._value, idx._left, idx._right,
            idx._start, idx._end, idx._perm, queries)
    ia, da = kernels._kd_query_numpy(*args)
    ib, db = kernels._kd_query_numba(*args)
    assert np.array_equal(ia, ib)
    assert np.array_equal(da, db)


@needs_numba
def test_mc_cells_paths_bit_identical():
    n = 12
    axes = np.linspace(-1, 1, n + 1)
    xx, yy, zz = np.meshgrid(axes, axes, axes, indexing="ij")
    values = np.sqrt(xx**2 + yy**2 + zz**2) - 0.55
    a = kernels._mc_cells_numpy(values, n)
    b = kernels._mc_cells_numba(values, n, kernels.TRI_TABLE, kernels.EDGE_CORNERS,
                                kernels.CORNER_OFFSETS)
    assert np.array_equal(a, b)


def test_bench_runs_quickly():
    from deformrecon import bench

    rows = bench.run_benchmarks(scale=0.1, repeats=1)
    names = {r["kernel"] for r in rows}
    assert {"bilinear", "kd_query", "marching_cubes"} <= names
    text = bench.format_table(rows)
    assert "kernel" in text and "numpy" in text
