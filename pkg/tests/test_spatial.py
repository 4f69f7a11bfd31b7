from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from deformrecon.spatial import build_index, linear_scan_nearest


def test_single_point():
    idx = build_index(np.array([[1.0, 2.0, 3.0]]))
    i, d = idx.query_one([0.0, 0.0, 0.0])
    assert i == 0
    assert abs(d - np.sqrt(14.0)) < 1e-12


def test_indexed_point_distance_zero():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(200, 3))
    idx = build_index(pts)
    ids, dists = idx.query(pts[::7])
    assert np.array_equal(ids, np.arange(0, 200, 7))
    assert np.array_equal(dists, np.zeros(len(dists)))


@pytest.mark.parametrize("n,leaf", [(50, 4), (1000, 16), (3000, 32)])
def test_matches_linear_scan(n, leaf):
    rng = np.random.default_rng(n)
    pts = rng.normal(size=(n, 3))
    queries = rng.normal(size=(100, 3)) * 1.5
    idx = build_index(pts, leaf_size=leaf)
    got_i, got_d = idx.query(queries)
    want_i, want_d = linear_scan_nearest(pts, queries)
    assert np.array_equal(got_i, want_i)
    assert np.array_equal(got_d, want_d)


def test_tie_breaking_lowest_index():
    # duplicated points: exact distance ties must resolve to the lowest index
    pts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    idx = build_index(pts, leaf_size=1)
    i, d = idx.query_one([1.0, 0.0, 0.0])
    assert i == 0 and d == 0.0
    # query equidistant from two distinct points placed symmetrically
    pts2 = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    idx2 = build_index(pts2, leaf_size=1)
    i2, d2 = idx2.query_one([0.0, 0.0, 0.0])
    assert i2 == 0 and abs(d2 - 1.0) < 1e-15


def test_duplicate_heavy_sets_match_linear_scan():
    rng = np.random.default_rng(5)
    base = rng.integers(0, 3, size=(400, 3)).astype(np.float64)
    queries = rng.integers(0, 3, size=(60, 3)).astype(np.float64) + rng.normal(
        scale=1e-12, size=(60, 3))
    idx = build_index(base, leaf_size=8)
    got_i, got_d = idx.query(queries)
    want_i, want_d = linear_scan_nearest(base, queries)
    assert np.array_equal(got_i, want_i)
    assert np.array_equal(got_d, want_d)


def test_2d_points_supported():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(300, 2))
    queries = rng.normal(size=(40, 2))
    idx = build_index(pts)
    got_i, _ = idx.query(queries)
    want_i, _ = linear_scan_nearest(pts, queries)
    assert np.array_equal(got_i, want_i)


def test_validation():
    with pytest.raises(ValueError):
        build_index(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        build_index(np.zeros((5, 3)), leaf_size=0)
    idx = build_index(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        idx.query(np.zeros((2, 2)))


def test_concurrent_queries_are_safe():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(2000, 3))
    idx = build_index(pts)
    queries = rng.normal(size=(64, 3))
    want_i, want_d = linear_scan_nearest(pts, queries)

    def work(q):
        return idx.query(q[None])

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(work, queries))
    got_i = np.array([r[0][0] for r in results])
    assert np.array_equal(got_i, want_i)
