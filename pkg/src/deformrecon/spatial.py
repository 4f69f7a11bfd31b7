"""Exact nearest-neighbor search over a balanced kd-tree.

Median splits on the widest axis, flat array storage, iterative stack-based
queries (numba or numpy backend). Queries return the exact minimum-distance
point; ties resolve to the lowest original index, and pruning is strict so
equal-distance candidates across a split plane are always visited.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class SpatialIndex:
    """Balanced space-partitioning tree over a fixed point set.

    Read-only after construction; concurrent queries are safe.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or len(points) == 0:
            raise ValueError("SpatialIndex: need a nonempty (n, d) point array")
        if leaf_size < 1:
            raise ValueError("SpatialIndex: leaf_size must be positive")
        self.points = points
        self.leaf_size = leaf_size
        n = len(points)
        max_nodes = 4 * max(n // leaf_size, 1) + 2
        self._axis = np.full(max_nodes, -1, dtype=np.int64)
        self._value = np.zeros(max_nodes)
        self._left = np.full(max_nodes, -1, dtype=np.int64)
        self._right = np.full(max_nodes, -1, dtype=np.int64)
        self._start = np.zeros(max_nodes, dtype=np.int64)
        self._end = np.zeros(max_nodes, dtype=np.int64)
        self._perm = np.arange(n, dtype=np.int64)
        self._n_nodes = 0
        self._build(0, n)
        self._axis = self._axis[: self._n_nodes].copy()
        self._value = self._value[: self._n_nodes].copy()
        self._left = self._left[: self._n_nodes].copy()
        self._right = self._right[: self._n_nodes].copy()
        self._start = self._start[: self._n_nodes].copy()
        self._end = self._end[: self._n_nodes].copy()

    def _new_node(self) -> int:
        node = self._n_nodes
        self._n_nodes += 1
        return node

    def _build(self, start: int, end: int) -> int:
        node = self._new_node()
        count = end - start
        if count <= self.leaf_size:
            self._axis[node] = -1
            self._start[node] = start
            self._end[node] = end
            return node
        seg = self._perm[start:end]
        pts = self.points[seg]
        spans = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spans))
        mid = count // 2
        order = np.argpartition(pts[:, axis], mid)
        self._perm[start:end] = seg[order]
        split_val = self.points[self._perm[start + mid], axis]
        self._axis[node] = axis
        self._value[node] = split_val
        self._left[node] = self._build(start, start + mid)
        self._right[node] = self._build(start + mid, end)
        return node

    def query(self, queries: np.ndarray):
        """Nearest neighbors for (q, d) query points.

        Returns (indices (q,), distances (q,)); exact, lowest index on ties.
        """
        queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if queries.shape[1] != self.points.shape[1]:
            raise ValueError(
                f"SpatialIndex.query: dimension {queries.shape[1]} != {self.points.shape[1]}"
            )
        idx, d2 = kernels.kd_query(self.points, self._axis, self._value, self._left,
                                   self._right, self._start, self._end, self._perm,
                                   queries)
        return idx, np.sqrt(d2)

    def query_one(self, point) -> tuple[int, float]:
        idx, dist = self.query(np.asarray(point, dtype=np.float64)[None])
        return int(idx[0]), float(dist[0])


def build_index(positions: np.ndarray, leaf_size: int = 16) -> SpatialIndex:
    """Index a point set for exact nearest-neighbor queries."""
    return SpatialIndex(positions, leaf_size=leaf_size)


def linear_scan_nearest(points: np.ndarray, queries: np.ndarray):
    """Brute-force reference: exact argmin of squared distance, first index wins."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d2 = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(queries)), idx])
