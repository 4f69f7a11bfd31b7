"""Pinhole camera model, depth backprojection, rays, and scene normalization.

Conventions: OpenCV-style camera frame (x right, y down, z forward), poses
are camera-to-world, pixel centers sit at integer coordinates (no half-pixel
offset), and depth stores camera-frame z with 0 meaning invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"Intrinsics: focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"Intrinsics: principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"Pose: rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("Pose: rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("Pose: rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.translation) @ self.rotation

    def matrix4(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix4(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])


@dataclass
class FrameSample:
    """One timestep: RGB in [0,1], metric depth (0 invalid), foreground mask,
    camera pose, and normalized time in [0,1]."""

    image: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    pose: Pose
    time: float
    index: int = 0

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        h, w = self.depth.shape
        if self.image.shape != (h, w, 3):
            raise ValueError(f"FrameSample: image shape {self.image.shape} != ({h}, {w}, 3)")
        if self.mask.shape != (h, w):
            raise ValueError(f"FrameSample: mask shape {self.mask.shape} != ({h}, {w})")
        if self.depth.min() < 0:
            raise ValueError("FrameSample: negative depth")
        if np.any(self.mask & (self.depth <= 0)):
            raise ValueError("FrameSample: masked-true pixel with invalid depth")
        if not (0.0 <= self.time <= 1.0):
            raise ValueError(f"FrameSample: time {self.time} outside [0, 1]")


@dataclass(frozen=True)
class SceneNormalization:
    """Map world points into the unit sphere: (x - center) * scale."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if self.scale <= 0:
            raise ValueError("SceneNormalization: scale must be positive")

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.center) * self.scale

    def unapply(self, pts: np.ndarray) -> np.ndarray:
        return pts / self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneNormalization":
        return cls(np.array(d["center"], dtype=np.float64), float(d["scale"]))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def backproject(u: float, v: float, depth: float, intr: Intrinsics) -> np.ndarray:
    """Lift pixel (u, v) at depth d to the camera frame."""
    if depth <= 0:
        raise ValueError(f"backproject: depth must be positive, got {depth}")
    if not (0 <= u <= intr.width - 1) or not (0 <= v <= intr.height - 1):
        raise ValueError(f"backproject: pixel ({u}, {v}) out of bounds")
    return np.array(
        [(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth]
    )


def backproject_many(us: np.ndarray, vs: np.ndarray, depths: np.ndarray,
                     intr: Intrinsics) -> np.ndarray:
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    return np.stack(
        [(us - intr.cx) * depths / intr.fx, (vs - intr.cy) * depths / intr.fy, depths],
        axis=-1,
    )


def project(pts: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Camera-frame points to pixel coordinates (u, v); z must be positive."""
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    uv = np.stack(
        [intr.fx * pts[:, 0] / z + intr.cx, intr.fy * pts[:, 1] / z + intr.cy], axis=-1
    )
    return uv[0] if single else uv


def depth_to_pointcloud(frame: FrameSample, intr: Intrinsics) -> np.ndarray:
    """World-frame point per masked pixel with valid depth; (n, 3)."""
    valid = frame.mask & (frame.depth > 0)
    if not valid.any():
        return np.zeros((0, 3))
    vs, us = np.nonzero(valid)
    cam = backproject_many(us.astype(np.float64), vs.astype(np.float64),
                           frame.depth[vs, us], intr)
    return frame.pose.camera_to_world(cam)


def pixel_rays(intr: Intrinsics, pose: Pose, pixels: np.ndarray):
    """World-frame rays through pixel centers: (origins (n,3), unit dirs (n,3))."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d_cam = np.stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            (pixels[:, 1] - intr.cy) / intr.fy,
            np.ones(len(pixels)),
        ],
        axis=-1,
    )
    d_world = d_cam @ pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, d_world.shape).copy()
    return origins, d_world


def normalize_scene(clouds) -> SceneNormalization:
    """Bounding-box unit-sphere normalization over all foreground clouds.

    center = bbox midpoint, scale = 1 / (half bbox diagonal); degenerate
    (zero-extent) input keeps scale 1.
    """
    pts = [np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in clouds]
    pts = [p for p in pts if len(p)]
    if not pts:
        raise ValueError("normalize_scene: all clouds empty")
    allp = np.concatenate(pts, axis=0)
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    center = 0.5 * (lo + hi)
    half_diag = 0.5 * float(np.linalg.norm(hi - lo))
    scale = 1.0 if half_diag == 0.0 else 1.0 / half_diag
    return SceneNormalization(center, scale)
