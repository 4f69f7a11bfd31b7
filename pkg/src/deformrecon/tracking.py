"""Keypoint grids, track ingestion, and densification of sparse 2D tracks.

Tracks arrive as a (T, Hg, Wg, 2) lattice of pixel positions with per-point
visibility (the output format of grid-based point trackers). They are turned
into displacements relative to frame 0 and lifted to full image resolution by
bilinear sampling of the keypoint lattice; the same normalized sampling grid
is reused for every frame so temporally constant input stays constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels

TRACKS_FORMAT_VERSION = 1


class TrackFormatError(ValueError):
    pass


@dataclass(frozen=True)
class KeypointGrid:
    """Hg x Wg keypoints at grid cell centers of an H x W image."""

    hg: int
    wg: int
    positions: np.ndarray  # (Hg, Wg, 2) as (u, v)


@dataclass
class TrackGrid:
    """Per-keypoint pixel tracks: points (T, Hg, Wg, 2), visible (T, Hg, Wg)."""

    points: np.ndarray
    visible: np.ndarray
    image_hw: tuple[int, int]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.points.ndim != 4 or self.points.shape[3] != 2:
            raise TrackFormatError(f"TrackGrid: points must be (T, Hg, Wg, 2), got {self.points.shape}")
        if self.visible.shape != self.points.shape[:3]:
            raise TrackFormatError(
                f"TrackGrid: visible shape {self.visible.shape} != {self.points.shape[:3]}"
            )
        if not np.all(np.isfinite(self.points)):
            raise TrackFormatError("TrackGrid: non-finite coordinates")
        h, w = self.image_hw
        inb = (
            (self.points[..., 0] >= 0) & (self.points[..., 0] <= w - 1)
            & (self.points[..., 1] >= 0) & (self.points[..., 1] <= h - 1)
        )
        if np.any(self.visible & ~inb):
            raise TrackFormatError("TrackGrid: visible point outside image bounds")

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.points.shape[1], self.points.shape[2]


def sample_grid(h: int, w: int, hg: int, wg: int) -> KeypointGrid:
    """Uniform keypoint grid at cell centers: (u, v) = ((j+0.5)W/Wg, (i+0.5)H/Hg)."""
    if not (2 <= hg <= h):
        raise ValueError(f"sample_grid: need 2 <= Hg <= H, got Hg={hg}, H={h}")
    if not (2 <= wg <= w):
        raise ValueError(f"sample_grid: need 2 <= Wg <= W, got Wg={wg}, W={w}")
    us = (np.arange(wg) + 0.5) * (w / wg)
    vs = (np.arange(hg) + 0.5) * (h / hg)
    uu, vv = np.meshgrid(us, vs)
    return KeypointGrid(hg, wg, np.stack([uu, vv], axis=-1))


def validate_frame0(tracks: TrackGrid):
    """Frame-0 points must equal the cell-center keypoint grid."""
    h, w = tracks.image_hw
    hg, wg = tracks.grid_shape
    grid = sample_grid(h, w, hg, wg)
    if not np.allclose(tracks.points[0], grid.positions, atol=1e-9):
        raise TrackFormatError("TrackGrid: frame-0 points differ from the declared keypoint grid")


def save_tracks(tracks: TrackGrid) -> str:
    validate_frame0(tracks)
    h, w = tracks.image_hw
    doc = {
        "format_version": TRACKS_FORMAT_VERSION,
        "T": tracks.n_frames,
        "Hg": tracks.grid_shape[0],
        "Wg": tracks.grid_shape[1],
        "image": {"H": h, "W": w},
        "points": tracks.points.tolist(),
        "visible": tracks.visible.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def save_tracks_file(tracks: TrackGrid, path):
    with open(path, "w") as f:
        f.write(save_tracks(tracks))


def load_tracks(path) -> TrackGrid:
    """Load and validate a track JSON file (schema + frame-0 consistency)."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise TrackFormatError(f"{path}: invalid JSON ({e})")
    if doc.get("format_version") != TRACKS_FORMAT_VERSION:
        raise TrackFormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    try:
        t, hg, wg = int(doc["T"]), int(doc["Hg"]), int(doc["Wg"])
        h, w = int(doc["image"]["H"]), int(doc["image"]["W"])
        points = np.array(doc["points"], dtype=np.float64)
        visible = np.array(doc["visible"], dtype=bool)
    except (KeyError, TypeError, ValueError) as e:
        raise TrackFormatError(f"{path}: malformed track file ({e})")
    if points.shape != (t, hg, wg, 2):
        raise TrackFormatError(
            f"{path}: points shape {points.shape} does not match declared (T={t}, Hg={hg}, Wg={wg}, 2)"
        )
    if visible.shape != (t, hg, wg):
        raise TrackFormatError(
            f"{path}: visible shape {visible.shape} does not match declared (T={t}, Hg={hg}, Wg={wg})"
        )
    tracks = TrackGrid(points, visible, (h, w))
    validate_frame0(tracks)
    return tracks


def to_displacements(tracks: TrackGrid) -> np.ndarray:
    """Per-keypoint displacement from frame 0, (T, Hg, Wg, 2) in pixels.

    Invisible entries hold the last visible displacement (zero if never seen),
    avoiding discontinuities under occlusion.
    """
    raw = tracks.points - tracks.points[0]
    out = np.zeros_like(raw)
    carry = np.zeros_like(raw[0])
    for t in range(tracks.n_frames):
        vis = tracks.visible[t][..., None]
        out[t] = np.where(vis, raw[t], carry)
        carry = out[t]
    return out


def lattice_coords(h: int, w: int, hg: int, wg: int, align_corners: bool = False):
    """Lattice sample coordinates of every target pixel.

    Default cell-center mapping places keypoint (i, j) at pixel
    ((j+0.5)W/Wg, (i+0.5)H/Hg), i.e. the normalized [-1, 1] target grid is
    sampled with xs = (gx+1)/2 * Wg - 0.5. align_corners=True instead maps
    pixel 0 -> node 0 and pixel W-1 -> node Wg-1.
    """
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    if align_corners:
        xs = cols * ((wg - 1) / (w - 1)) if w > 1 else np.zeros_like(cols)
        ys = rows * ((hg - 1) / (h - 1)) if h > 1 else np.zeros_like(rows)
    else:
        xs = cols * (wg / w) - 0.5
        ys = rows * (hg / h) - 0.5
    return xs, ys


def densify(disp: np.ndarray, h: int, w: int, align_corners: bool = False) -> np.ndarray:
    """Bilinearly lift one (Hg, Wg, 2) displacement lattice to (h, w, 2).

    Border pixels clamp to edge lattice values.
    """
    disp = np.asarray(disp, dtype=np.float64)
    hg, wg = disp.shape[0], disp.shape[1]
    if hg < 2 or wg < 2:
        raise ValueError(f"densify: lattice must be at least 2x2, got {hg}x{wg}")
    xs, ys = lattice_coords(h, w, hg, wg, align_corners)
    xx, yy = np.meshgrid(xs, ys)
    out = kernels.bilinear_sample(disp, xx.reshape(-1), yy.reshape(-1))
    return out.reshape(h, w, disp.shape[2])


def densify_sequence(disp: np.ndarray, h: int, w: int, align_corners: bool = False) -> np.ndarray:
    """Densify every frame with the identical sampling grid -> (T, h, w, 2)."""
    disp = np.asarray(disp, dtype=np.float64)
    t, hg, wg = disp.shape[0], disp.shape[1], disp.shape[2]
    if hg < 2 or wg < 2:
        raise ValueError(f"densify_sequence: lattice must be at least 2x2, got {hg}x{wg}")
    xs, ys = lattice_coords(h, w, hg, wg, align_corners)
    xx, yy = np.meshgrid(xs, ys)
    xf, yf = xx.reshape(-1), yy.reshape(-1)
    out = np.empty((t, h, w, disp.shape[3]))
    for i in range(t):
        out[i] = kernels.bilinear_sample(disp[i], xf, yf).reshape(h, w, disp.shape[3])
    return out


def sample_field(field: np.ndarray, us, vs) -> np.ndarray:
    """Bilinear lookup of a dense (H, W, C) field at continuous pixel coords.

    Pixel centers are at integer coordinates; out-of-image coordinates clamp
    to the nearest border value.
    """
    us = np.atleast_1d(np.asarray(us, dtype=np.float64))
    vs = np.atleast_1d(np.asarray(vs, dtype=np.float64))
    return kernels.bilinear_sample(np.asarray(field, dtype=np.float64), us, vs)
