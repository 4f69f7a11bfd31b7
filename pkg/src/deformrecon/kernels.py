"""Hot numeric kernels, each with a numba @njit path and a pure-numpy path.

Dispatch is decided once at import time by :mod:`deformrecon.backend`.
The two paths evaluate the same IEEE expressions in the same order, so
results are bit-identical; tests assert exact equality between them.
"""

import numpy as np

from .backend import USE_NUMBA, njit
from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE


# ---------------------------------------------------------------------------
# bilinear lattice sampling (track densification, dense-field lookups)
# ---------------------------------------------------------------------------

def _bilinear_numpy(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = grid.shape[0], grid.shape[1]
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xc), w - 2.0) if w > 1 else np.zeros_like(xc)
    y0 = np.minimum(np.floor(yc), h - 2.0) if h > 1 else np.zeros_like(yc)
    x0 = np.maximum(x0, 0.0)
    y0 = np.maximum(y0, 0.0)
    fx = xc - x0
    fy = yc - y0
    i0 = y0.astype(np.int64)
    j0 = x0.astype(np.int64)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fx = fx[:, None]
    fy = fy[:, None]
    v00 = grid[i0, j0]
    v01 = grid[i0, j1]
    v10 = grid[i1, j0]
    v11 = grid[i1, j1]
    return (
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
        + fy * ((1.0 - fx) * v10 + fx * v11)
    )


@njit
def _bilinear_numba(grid, xs, ys):
    h, w, c = grid.shape
    n = xs.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    for k in range(n):
        xc = min(max(xs[k], 0.0), w - 1.0)
        yc = min(max(ys[k], 0.0), h - 1.0)
        x0 = min(np.floor(xc), w - 2.0) if w > 1 else 0.0
        y0 = min(np.floor(yc), h - 2.0) if h > 1 else 0.0
        x0 = max(x0, 0.0)
        y0 = max(y0, 0.0)
        fx = xc - x0
        fy = yc - y0
        i0 = int(y0)
        j0 = int(x0)
        i1 = min(i0 + 1, h - 1)
        j1 = min(j0 + 1, w - 1)
        for ch in range(c):
            v00 = grid[i0, j0, ch]
            v01 = grid[i0, j1, ch]
            v10 = grid[i1, j0, ch]
            v11 = grid[i1, j1, ch]
            out[k, ch] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * (
                (1.0 - fx) * v10 + fx * v11
            )
    return out


def bilinear_sample(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``grid`` (h, w, c) at continuous lattice coords, clamped to edges.

    ``xs``/``ys`` are column/row coordinates on the lattice (node spacing 1,
    node (i, j) at coordinate (j, i)). Returns (n, c).
    """
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if USE_NUMBA:
        return _bilinear_numba(grid, xs, ys)
    return _bilinear_numpy(grid, xs, ys)


# ---------------------------------------------------------------------------
# kd-tree nearest-neighbor query
# ---------------------------------------------------------------------------
#
# Tree layout (built in spatial.py): per node arrays
#   axis[n]   split axis, -1 for leaf
#   value[n]  split coordinate
#   left[n], right[n]  child node ids
#   start[n], end[n]   leaf range into perm (original point indices)
# Traversal visits the near side first and prunes the far side only when the
# squared plane distance strictly exceeds the best squared distance, so
# exact ties are still found; ties resolve to the lowest original index.

def _kd_query_numpy(pts, axis, value, left, right, start, end, perm, queries):
    n_q = queries.shape[0]
    idx_out = np.empty(n_q, dtype=np.int64)
    d2_out = np.empty(n_q, dtype=np.float64)
    stack = np.empty(64, dtype=np.int64)
    for q in range(n_q):
        query = queries[q]
        best_d2 = np.inf
        best_idx = -1
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            ax = axis[node]
            if ax < 0:
                for t in range(start[node], end[node]):
                    p = perm[t]
                    d2 = 0.0
                    for d in range(queries.shape[1]):
                        diff = pts[p, d] - query[d]
                        d2 += diff * diff
                    if d2 < best_d2 or (d2 == best_d2 and p < best_idx):
                        best_d2 = d2
                        best_idx = p
                continue
            plane = query[ax] - value[node]
            if plane <= 0.0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            if plane * plane <= best_d2:
                stack[top] = far
                top += 1
            stack[top] = near
            top += 1
        idx_out[q] = best_idx
        d2_out[q] = best_d2
    return idx_out, d2_out


@njit
def _kd_query_numba(pts, axis, value, left, right, start, end, perm, queries):
    n_q = queries.shape[0]
    dim = queries.shape[1]
    idx_out = np.empty(n_q, dtype=np.int64)
    d2_out = np.empty(n_q, dtype=np.float64)
    stack = np.empty(64, dtype=np.int64)
    for q in range(n_q):
        best_d2 = np.inf
        best_idx = -1
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            ax = axis[node]
            if ax < 0:
                for t in range(start[node], end[node]):
                    p = perm[t]
                    d2 = 0.0
                    for d in range(dim):
                        diff = pts[p, d] - queries[q, d]
                        d2 += diff * diff
                    if d2 < best_d2 or (d2 == best_d2 and p < best_idx):
                        best_d2 = d2
                        best_idx = p
                continue
            plane = queries[q, ax] - value[node]
            if plane <= 0.0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            if plane * plane <= best_d2:
                stack[top] = far
                top += 1
            stack[top] = near
            top += 1
        idx_out[q] = best_idx
        d2_out[q] = best_d2
    return idx_out, d2_out


def kd_query(pts, axis, value, left, right, start, end, perm, queries):
    if USE_NUMBA:
        return _kd_query_numba(pts, axis, value, left, right, start, end, perm, queries)
    return _kd_query_numpy(pts, axis, value, left, right, start, end, perm, queries)


# ---------------------------------------------------------------------------
# marching cubes cell pass
# ---------------------------------------------------------------------------
#
# Two-phase extraction over an (n+1, n+1, n+1) scalar lattice:
#   1. every lattice edge with a strict inside/outside sign change gets one
#      interpolated vertex, keyed by a global edge id
#      id = (lattice_index(i, j, k) * 3 + axis)
#   2. cells emit triangles as triples of edge ids via the case tables.
# Vertex positions use p = p0 + (-v0 / (v1 - v0)) * (p1 - p0) with v0 at the
# lower lattice corner; both backends share this exact expression.

def _mc_cells_numpy(values, n):
    inside = values < 0.0
    tris = []
    corner_idx = np.zeros(8, dtype=np.int64)
    corner_inside = [
        inside[dx : dx + n, dy : dy + n, dz : dz + n] for dx, dy, dz in CORNER_OFFSETS
    ]
    any_in = np.logical_or.reduce(corner_inside)
    all_in = np.logical_and.reduce(corner_inside)
    active = np.argwhere(any_in & ~all_in)
    m = n + 1
    for i, j, k in active:
        case = 0
        for c in range(8):
            dx, dy, dz = CORNER_OFFSETS[c]
            if inside[i + dx, j + dy, k + dz]:
                case |= 1 << c
            corner_idx[c] = ((i + dx) * m + (j + dy)) * m + (k + dz)
        row = TRI_TABLE[case]
        for t in range(0, 16, 3):
            if row[t] < 0:
                break
            tri = np.empty(3, dtype=np.int64)
            for v in range(3):
                e = row[t + v]
                c0, c1 = EDGE_CORNERS[e]
                a = corner_idx[c0]
                b = corner_idx[c1]
                if a > b:
                    a, b = b, a
                # global edge id: lower lattice index * 3 + axis
                diff = b - a
                if diff == 1:
                    ax = 2
                elif diff == m:
                    ax = 1
                else:
                    ax = 0
                tri[v] = a * 3 + ax
            tris.append(tri.copy())
    if tris:
        return np.stack(tris)
    return np.zeros((0, 3), dtype=np.int64)


@njit
def _mc_cells_numba(values, n, tri_table, edge_corners, corner_offsets):
    m = n + 1
    max_tris = 5 * n * n * n
    out = np.empty((max_tris, 3), dtype=np.int64)
    count = 0
    corner_idx = np.zeros(8, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                case = 0
                for c in range(8):
                    dx = corner_offsets[c, 0]
                    dy = corner_offsets[c, 1]
                    dz = corner_offsets[c, 2]
                    if values[i + dx, j + dy, k + dz] < 0.0:
                        case |= 1 << c
                    corner_idx[c] = ((i + dx) * m + (j + dy)) * m + (k + dz)
                if case == 0 or case == 255:
                    continue
                for t in range(0, 16, 3):
                    if tri_table[case, t] < 0:
                        break
                    for v in range(3):
                        e = tri_table[case, t + v]
                        a = corner_idx[edge_corners[e, 0]]
                        b = corner_idx[edge_corners[e, 1]]
                        if a > b:
                            a, b = b, a
                        diff = b - a
                        if diff == 1:
                            ax = 2
                        elif diff == m:
                            ax = 1
                        else:
                            ax = 0
                        out[count, v] = a * 3 + ax
                    count += 1
    return out[:count]


def mc_cells(values: np.ndarray, n: int) -> np.ndarray:
    """Triangles of the zero level set as (t, 3) global edge ids."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if USE_NUMBA:
        return _mc_cells_numba(values, n, TRI_TABLE, EDGE_CORNERS, CORNER_OFFSETS)
    return _mc_cells_numpy(values, n)
