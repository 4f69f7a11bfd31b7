"""Training loop: plain gradient descent with exponential step decay.

One frame per iteration (round robin over the training split), a fresh ray
batch from its foreground pixels, stratified resampling every step. The
optimizer is deliberately momentum-free; determinism comes from a single
seeded generator with a fixed draw order (pixels, strata, ablation).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .camera import (FrameSample, Intrinsics, SceneNormalization,
                     backproject_many, depth_to_pointcloud, normalize_scene,
                     pixel_rays)
from .fields import FieldBundle, FieldConfig
from .render import (RayBatch, TrackConditioner, geometry_loss, ray_sphere_bounds,
                     render_rays, rendering_loss)

HISTORY_FIELDS = ("iteration", "total", "color", "depth", "eikonal", "sdf_depth")


class NanLossError(RuntimeError):
    """Raised when a loss term goes non-finite; names the first offender."""

    def __init__(self, term: str, iteration: int):
        self.term = term
        self.iteration = iteration
        super().__init__(f"non-finite {term} loss at iteration {iteration}")


@dataclass
class TrainConfig:
    iterations: int = 2000
    rays_per_batch: int = 192
    samples_per_ray: int = 20
    bound_radius: float = 1.0
    near: float | None = None       # None: per-ray sphere bounds
    far: float | None = None
    learning_rate: float = 2e-3
    lr_decay: float = 0.1           # final lr = learning_rate * lr_decay
    lambda_color: float = 1.0
    lambda_depth: float = 0.5
    lambda_eikonal: float = 0.1
    lambda_sdf_depth: float = 0.5
    p_clear: float = 0.0
    zero_track_conditioning: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("iterations", "rays_per_batch", "samples_per_ray"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.samples_per_ray < 2:
            raise ValueError("TrainConfig.samples_per_ray must be at least 2")
        for name in ("bound_radius", "learning_rate", "lr_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        for name in ("lambda_color", "lambda_depth", "lambda_eikonal", "lambda_sdf_depth"):
            if getattr(self, name) < 0:
                raise ValueError(f"TrainConfig.{name} must be nonnegative")
        if not (0.0 <= self.p_clear <= 1.0):
            raise ValueError("TrainConfig.p_clear must lie in [0, 1]")
        if self.near is not None and self.far is not None and not self.near < self.far:
            raise ValueError("TrainConfig: near must be below far")


def split_frames(frames: list[FrameSample]):
    """7:1 split by frame index: every 8th frame (i % 8 == 7) is held out."""
    train = [f for i, f in enumerate(frames) if i % 8 != 7]
    test = [f for i, f in enumerate(frames) if i % 8 == 7]
    return train, test


def ablate_reference(points: np.ndarray, p_clear: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Zero each reference point independently with probability p_clear."""
    if not (0.0 <= p_clear <= 1.0):
        raise ValueError("ablate_reference: p_clear must lie in [0, 1]")
    points = np.asarray(points, dtype=np.float64)
    cleared = rng.uniform(size=points.shape[0]) < p_clear
    return np.where(cleared[:, None], 0.0, points)


class FrameRays:
    """Precomputed per-frame ray data over foreground pixels, in normalized space."""

    def __init__(self, frame: FrameSample, intr: Intrinsics, norm: SceneNormalization,
                 bound_radius: float):
        vs, us = np.nonzero(frame.mask)
        pixels = np.stack([us, vs], axis=1).astype(np.float64)
        origins_w, dirs_w = pixel_rays(intr, frame.pose, pixels)
        origins = norm.apply(origins_w)
        surf_w = frame.pose.camera_to_world(
            backproject_many(pixels[:, 0], pixels[:, 1], frame.depth[vs, us], intr))
        surf = norm.apply(surf_w)
        gt_dist = np.linalg.norm(surf - origins, axis=1)
        _, _, hit = ray_sphere_bounds(origins, dirs_w, bound_radius)
        self.pixels = pixels[hit]
        self.origins = origins[hit]
        self.dirs = dirs_w[hit]
        self.colors = frame.image[vs, us][hit]
        self.gt_dist = gt_dist[hit]
        self.time = float(frame.time)
        self.index = frame.index

    @property
    def n_rays(self) -> int:
        return len(self.origins)

    def batch(self, idx: np.ndarray) -> RayBatch:
        return RayBatch(self.origins[idx], self.dirs[idx], self.colors[idx],
                        self.gt_dist[idx], self.time, self.index)


def compute_normalization(frames: list[FrameSample], intr: Intrinsics) -> SceneNormalization:
    return normalize_scene([depth_to_pointcloud(f, intr) for f in frames])


def train(frames: list[FrameSample], intr: Intrinsics, dense_fields: np.ndarray,
          cfg: TrainConfig, normalization: SceneNormalization | None = None,
          field_cfg: FieldConfig | None = None):
    """Fit the field bundle on the given (training) frames.

    Returns (bundle, history); history has one row per iteration with the
    individual loss terms. NaN in any term aborts with the term's name.
    """
    if not frames:
        raise ValueError("train: no frames")
    norm = normalization if normalization is not None else compute_normalization(frames, intr)
    if field_cfg is None:
        field_cfg = FieldConfig(image_height=intr.height, image_width=intr.width,
                                seed=cfg.seed)
    field_cfg.zero_track_conditioning = cfg.zero_track_conditioning
    bundle = FieldBundle(field_cfg)
    bundle.set_normalization(norm)
    conditioner = TrackConditioner(dense_fields, intr, frames[0].pose, norm,
                                   zero=cfg.zero_track_conditioning)
    rays = [FrameRays(f, intr, norm, cfg.bound_radius) for f in frames]
    if any(fr.n_rays == 0 for fr in rays):
        raise ValueError("train: a frame has no usable foreground rays")

    rng = np.random.default_rng(cfg.seed)
    decay_rate = cfg.lr_decay ** (1.0 / max(cfg.iterations - 1, 1))
    history = []
    for it in range(cfg.iterations):
        fr = rays[it % len(rays)]
        idx = rng.integers(0, fr.n_rays, size=min(cfg.rays_per_batch, fr.n_rays))
        batch = fr.batch(idx)
        out = render_rays(bundle, batch, conditioner, cfg.samples_per_ray, rng,
                          bound_radius=cfg.bound_radius, near=cfg.near, far=cfg.far,
                          p_clear=cfg.p_clear, ablate_rng=rng)
        r_loss, c_val, d_val = rendering_loss(out, batch, cfg.lambda_color, cfg.lambda_depth)
        g_loss, e_val, s_val = geometry_loss(bundle, out, batch, conditioner,
                                             cfg.lambda_eikonal, cfg.lambda_sdf_depth)
        total = ad.add(r_loss, g_loss)
        for name, val in (("color", c_val), ("depth", d_val), ("eikonal", e_val),
                          ("sdf_depth", s_val), ("total", float(total.data))):
            if not np.isfinite(val):
                raise NanLossError(name, it)
        bundle.store.zero_grad()
        total.backward(np.array(1.0))
        lr = cfg.learning_rate * (decay_rate ** it)
        bundle.store.rms_step(lr)
        history.append({"iteration": it, "total": float(total.data), "color": c_val,
                        "depth": d_val, "eikonal": e_val, "sdf_depth": s_val})
    return bundle, history


def save_history_csv(path, history: list[dict]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def load_history_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]
