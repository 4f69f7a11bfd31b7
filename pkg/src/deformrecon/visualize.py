"""Deformation visualization: color-encoded meshes and 2D heatmaps.

The mesh painter flattens per-pixel deformation grids into paired position/
vector arrays, indexes the positions for exact nearest-neighbor lookup, and
colors every mesh vertex by its matched vector's magnitude (normalized by
the 99th-percentile magnitude for outlier robustness) through a piecewise
linear colormap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh
from .spatial import SpatialIndex


@dataclass(frozen=True)
class ColorMap:
    """Piecewise-linear map from [0, 1] scalars to RGB."""

    stops: tuple = (
        (0.0, (0.0, 0.0, 1.0)),
        (0.5, (1.0, 1.0, 1.0)),
        (1.0, (1.0, 0.0, 0.0)),
    )

    def __post_init__(self):
        pos = [s[0] for s in self.stops]
        if pos[0] != 0.0 or pos[-1] != 1.0:
            raise ValueError("ColorMap: stops must start at 0 and end at 1")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("ColorMap: stop positions must strictly increase")

    def __call__(self, values) -> np.ndarray:
        values = np.clip(np.atleast_1d(np.asarray(values, dtype=np.float64)), 0.0, 1.0)
        pos = np.array([s[0] for s in self.stops])
        cols = np.array([s[1] for s in self.stops])
        out = np.empty((len(values), 3))
        seg = np.clip(np.searchsorted(pos, values, side="right") - 1, 0, len(pos) - 2)
        lo = pos[seg]
        hi = pos[seg + 1]
        w = ((values - lo) / (hi - lo))[:, None]
        out = (1.0 - w) * cols[seg] + w * cols[seg + 1]
        return out


def flatten_field(positions_grid: np.ndarray, vectors_grid: np.ndarray,
                  mask: np.ndarray):
    """Row-major flattening of paired (H, W, 3) grids restricted to the mask.

    positions[i] pairs with vectors[i] for every i.
    """
    positions_grid = np.asarray(positions_grid, dtype=np.float64)
    vectors_grid = np.asarray(vectors_grid, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if positions_grid.shape != vectors_grid.shape or positions_grid.shape[:2] != mask.shape:
        raise ValueError(
            f"flatten_field: shapes disagree: {positions_grid.shape}, "
            f"{vectors_grid.shape}, {mask.shape}"
        )
    flat = mask.reshape(-1)
    return (positions_grid.reshape(-1, 3)[flat].copy(),
            vectors_grid.reshape(-1, 3)[flat].copy())


def magnitude_scale(vectors: np.ndarray, percentile: float = 99.0) -> float:
    """Normalization constant for color encoding: percentile of magnitudes."""
    mags = np.linalg.norm(np.asarray(vectors, dtype=np.float64), axis=-1)
    d_max = float(np.percentile(mags, percentile)) if mags.size else 0.0
    return d_max


def colorize(mesh: TriangleMesh, index: SpatialIndex, vectors: np.ndarray,
             cmap: ColorMap | None = None, d_max: float | None = None) -> TriangleMesh:
    """Color each vertex by its nearest grid sample's deformation magnitude.

    Normalization uses d_max (default: 99th percentile of all magnitudes),
    clamped into [0, 1] before the colormap.
    """
    cmap = cmap if cmap is not None else ColorMap()
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) != len(index.points):
        raise ValueError("colorize: one vector per indexed position required")
    if d_max is None:
        d_max = magnitude_scale(vectors)
    if len(mesh.vertices) == 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy(),
                            np.zeros((0, 3)))
    idx, _ = index.query(mesh.vertices)
    mags = np.linalg.norm(vectors[idx], axis=1)
    normed = mags / d_max if d_max > 0 else np.zeros_like(mags)
    return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy(), cmap(normed))


def heatmap_image(magnitudes: np.ndarray, cmap: ColorMap | None = None,
                  d_max: float | None = None) -> np.ndarray:
    """(H, W) scalar magnitudes -> (H, W, 3) colormapped image in [0, 1]."""
    cmap = cmap if cmap is not None else ColorMap()
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    if d_max is None:
        d_max = float(np.percentile(magnitudes, 99.0))
    normed = magnitudes / d_max if d_max > 0 else np.zeros_like(magnitudes)
    return cmap(normed.reshape(-1)).reshape(*magnitudes.shape, 3)
