"""SDF volume rendering along rays, with rendering and geometry losses.

Opacity scheme (the deferred-to-reference part of the method, documented
here with its formula): the SDF value f_i at consecutive samples is pushed
through the logistic CDF Phi(x) = sigmoid(s * x) with learnable sharpness s,
and each section [s_i, s_{i+1}) gets

    alpha_i = clamp(1 - Phi(s * f_{i+1}) / Phi(s * f_i), 0, 1 - 1e-7)

so alpha is positive exactly where the SDF decreases through the section
(front-facing surface crossings). Weights are standard alpha compositing
w_i = alpha_i * prod_{j<i}(1 - alpha_j); color/normal/feature are evaluated
at section starts, expected depth uses section midpoints.

Everything here builds tape graphs, so one reverse pass differentiates the
full loss (including the eikonal term on the SDF gradient and the view
transport through the deformation Jacobian) w.r.t. all field parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import Intrinsics, Pose, SceneNormalization
from .fields import FieldBundle
from .tracking import sample_field

ALPHA_MAX = 1.0 - 1e-7
EPS_DIV = 1e-12


@dataclass
class RayBatch:
    """Rays in normalized scene space with per-ray supervision."""

    origins: np.ndarray    # (R, 3)
    dirs: np.ndarray       # (R, 3), unit
    colors: np.ndarray     # (R, 3) ground-truth color
    gt_dist: np.ndarray    # (R,) distance to GT surface point, 0 = unavailable
    time: float
    frame_index: int

    def __post_init__(self):
        norms = np.linalg.norm(self.dirs, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("RayBatch: directions must be unit length")

    @property
    def n_rays(self) -> int:
        return self.origins.shape[0]


@dataclass
class RenderResult:
    """Plain-array view of one rendered ray (the batched path keeps graphs)."""

    color: np.ndarray
    depth: float
    weights: np.ndarray
    sdf_values: np.ndarray
    gradients: np.ndarray


class RenderOutputs:
    """Graph tensors of a rendered batch, kept alive for the losses."""

    def __init__(self, color, depth, weights, sdf_values, sdf_gradients, dists, n_rays, n_samples):
        self.color = color                # (R, 3)
        self.depth = depth                # (R,)
        self.weights = weights            # (R, S-1)
        self.sdf_values = sdf_values      # (N, 1)
        self.sdf_gradients = sdf_gradients  # (N, 3)
        self.dists = dists                # (R, S) sample distances, ndarray
        self.n_rays = n_rays
        self.n_samples = n_samples


class TrackConditioner:
    """Samples the densified 2D track field at reference-frame projections.

    The dense displacement field is anchored at frame-0 pixels, so a 3D
    point is projected through the reference camera and the per-frame field
    is read there. `zero=True` switches the conditioning off (the
    no-tracking baseline).
    """

    def __init__(self, dense_fields: np.ndarray, intr: Intrinsics, ref_pose: Pose,
                 normalization: SceneNormalization, zero: bool = False):
        self.dense_fields = np.asarray(dense_fields, dtype=np.float64)
        self.intr = intr
        self.ref_pose = ref_pose
        self.normalization = normalization
        self.zero = zero

    def __call__(self, pts_norm: np.ndarray, frame_index: int) -> np.ndarray:
        pts_norm = np.asarray(pts_norm, dtype=np.float64).reshape(-1, 3)
        if self.zero:
            return np.zeros((len(pts_norm), 2))
        world = self.normalization.unapply(pts_norm)
        cam = self.ref_pose.world_to_camera(world)
        z = np.maximum(cam[:, 2], 1e-9)
        u = self.intr.fx * cam[:, 0] / z + self.intr.cx
        v = self.intr.fy * cam[:, 1] / z + self.intr.cy
        return sample_field(self.dense_fields[frame_index], u, v)


def stratified_samples(near: float, far: float, n: int, rng: np.random.Generator | None) -> np.ndarray:
    """One uniform draw per stratum of [near, far]; midpoints when rng is None."""
    if not near < far:
        raise ValueError(f"stratified_samples: need near < far, got {near}, {far}")
    if n < 2:
        raise ValueError("stratified_samples: need at least 2 samples")
    edges = np.linspace(near, far, n + 1)
    if rng is None:
        offs = np.full(n, 0.5)
    else:
        offs = rng.uniform(size=n)
    return edges[:-1] + offs * (edges[1] - edges[0])


def stratified_samples_batch(near: np.ndarray, far: np.ndarray, n: int,
                             rng: np.random.Generator | None) -> np.ndarray:
    """(R, n) stratified distances with per-ray bounds."""
    near = np.asarray(near, dtype=np.float64)[:, None]
    far = np.asarray(far, dtype=np.float64)[:, None]
    base = np.linspace(0.0, 1.0, n, endpoint=False)[None, :]
    if rng is None:
        offs = np.full((len(near), n), 0.5)
    else:
        offs = rng.uniform(size=(len(near), n))
    frac = base + offs / n
    return near + frac * (far - near)


def ray_sphere_bounds(origins: np.ndarray, dirs: np.ndarray, radius: float):
    """Entry/exit distances of rays against the bounding sphere.

    Returns (near, far, hit); rays that miss get hit=False.
    """
    b = np.sum(origins * dirs, axis=1)
    c = np.sum(origins * origins, axis=1) - radius * radius
    disc = b * b - c
    hit = disc > 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    near = np.maximum(-b - sq, 1e-4)
    far = -b + sq
    hit &= far > near
    return near, far, hit


def render_rays(bundle: FieldBundle, batch: RayBatch, conditioner: TrackConditioner,
                n_samples: int, rng: np.random.Generator | None,
                bound_radius: float = 1.0, near: float | None = None,
                far: float | None = None, p_clear: float = 0.0,
                ablate_rng: np.random.Generator | None = None) -> RenderOutputs:
    """Render a batch of rays from one frame; returns graph tensors.

    Rays must intersect the bounding sphere (callers filter with
    ray_sphere_bounds); fixed [near, far] overrides the per-ray bounds.
    """
    r = batch.n_rays
    s = n_samples
    if near is not None and far is not None:
        nears = np.full(r, near)
        fars = np.full(r, far)
    else:
        nears, fars, hit = ray_sphere_bounds(batch.origins, batch.dirs, bound_radius)
        if not hit.all():
            raise ValueError("render_rays: batch contains rays missing the scene bounds")
    dists = stratified_samples_batch(nears, fars, s, rng)

    pts = batch.origins[:, None, :] + batch.dirs[:, None, :] * dists[:, :, None]
    pts_flat = pts.reshape(-1, 3)
    v_flat = np.repeat(batch.dirs, s, axis=0)
    n_pts = pts_flat.shape[0]

    x_fed = pts_flat
    if p_clear > 0.0:
        gen = ablate_rng if ablate_rng is not None else rng
        if gen is None:
            raise ValueError("render_rays: ablation requested without a generator")
        cleared = gen.uniform(size=n_pts) < p_clear
        x_fed = np.where(cleared[:, None], 0.0, pts_flat)

    p_hat = conditioner(pts_flat, batch.frame_index)
    ts = np.full(n_pts, batch.time)

    # observation -> canonical
    delta, d_ctx = bundle.deform_forward(Tensor(x_fed), p_hat, ts)
    x_c = ad.add(Tensor(pts_flat), delta)

    # view transport: v_c = normalize((I + J) v), J.v via forward-mode tangent
    jv = bundle.deform_jvp(d_ctx, v_flat)
    v_raw = ad.add(Tensor(v_flat), jv)
    v_norm = ad.clip(ad.l2_norm(v_raw, axis=1, eps=1e-12), 1e-9, None)
    v_c = ad.mul(v_raw, ad.pow_const(v_norm, -1.0))

    # canonical fields
    dist, feat, s_cache, s_enc, enc_xc = bundle.sdf_forward(x_c)
    grad = bundle.sdf_input_gradient(s_cache, s_enc)
    g_norm = ad.clip(ad.l2_norm(grad, axis=1, eps=1e-12), 1e-9, None)
    normal = ad.mul(grad, ad.pow_const(g_norm, -1.0))
    rgb = bundle.radiance_forward(enc_xc, v_c, normal, feat)

    # logistic-CDF alpha over sections
    sharp = ad.exp(bundle.log_sharpness)
    dist_mat = ad.reshape(dist, (r, s))
    phi = ad.sigmoid(ad.mul(dist_mat, sharp))
    phi_prev = ad.slice_axis1(phi, 0, s - 1)
    phi_next = ad.slice_axis1(phi, 1, s)
    ratio = ad.mul(phi_next, ad.pow_const(ad.add(phi_prev, EPS_DIV), -1.0))
    alpha = ad.clip(ad.add(ad.mul(ratio, -1.0), 1.0), 0.0, ALPHA_MAX)
    trans = ad.exclusive_cumprod(ad.add(ad.mul(alpha, -1.0), 1.0))
    weights = ad.mul(alpha, trans)

    rgb_sections = ad.slice_axis1(ad.reshape(rgb, (r, s, 3)), 0, s - 1)
    color = ad.sum_(ad.mul(ad.reshape(weights, (r, s - 1, 1)), rgb_sections), axis=1)
    mids = 0.5 * (dists[:, :-1] + dists[:, 1:])
    depth = ad.sum_(ad.mul(weights, Tensor(mids)), axis=1)

    return RenderOutputs(color, depth, weights, dist, grad, dists, r, s)


def render_ray(bundle: FieldBundle, origin, direction, time: float,
               conditioner: TrackConditioner, n_samples: int = 24,
               bound_radius: float = 1.0, rng: np.random.Generator | None = None,
               frame_index: int = 0) -> RenderResult:
    """Single-ray convenience wrapper; missing the bounds gives a transparent
    result with zero weights."""
    origin = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    direction = direction / np.linalg.norm(direction)
    _, _, hit = ray_sphere_bounds(origin, direction, bound_radius)
    if not hit[0]:
        return RenderResult(
            color=np.zeros(3), depth=0.0, weights=np.zeros(n_samples - 1),
            sdf_values=np.zeros(n_samples), gradients=np.zeros((n_samples, 3)),
        )
    batch = RayBatch(origin, direction, np.zeros((1, 3)), np.zeros(1), time, frame_index)
    out = render_rays(bundle, batch, conditioner, n_samples, rng, bound_radius)
    return RenderResult(
        color=out.color.data[0],
        depth=float(out.depth.data[0]),
        weights=out.weights.data[0],
        sdf_values=out.sdf_values.data.reshape(-1),
        gradients=out.sdf_gradients.data,
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def rendering_loss(out: RenderOutputs, batch: RayBatch, lambda_color: float,
                   lambda_depth: float):
    """lambda_c * mean L1(color) + lambda_d * mean L1(depth | gt available).

    Returns (loss graph, color term value, depth term value).
    """
    diff = ad.abs_(ad.add(out.color, Tensor(-batch.colors)))
    color_l1 = ad.mul(ad.sum_(diff), 1.0 / (3.0 * batch.n_rays))
    valid = batch.gt_dist > 0
    n_valid = int(valid.sum())
    if n_valid:
        m = Tensor(valid.astype(np.float64))
        ddiff = ad.abs_(ad.add(out.depth, Tensor(-batch.gt_dist)))
        depth_l1 = ad.mul(ad.sum_(ad.mul(ddiff, m)), 1.0 / n_valid)
    else:
        depth_l1 = Tensor(np.array(0.0))
    loss = ad.add(ad.mul(color_l1, lambda_color), ad.mul(depth_l1, lambda_depth))
    return loss, float(color_l1.data), float(depth_l1.data)


def geometry_loss(bundle: FieldBundle, out: RenderOutputs, batch: RayBatch,
                  conditioner: TrackConditioner, lambda_eikonal: float,
                  lambda_sdf_depth: float):
    """Eikonal penalty on sample gradients + |sdf| at GT surface points.

    GT surface points travel through the deformation before the SDF query,
    exactly like render samples. Returns (loss graph, eikonal value, sdf
    term value).
    """
    g_norm = ad.l2_norm(out.sdf_gradients, axis=1, keepdims=False, eps=1e-12)
    resid = ad.add(g_norm, -1.0)
    eik = ad.mean_(ad.mul(resid, resid))

    valid = batch.gt_dist > 0
    n_valid = int(valid.sum())
    if n_valid:
        x_s = batch.origins[valid] + batch.dirs[valid] * batch.gt_dist[valid, None]
        p_hat = conditioner(x_s, batch.frame_index)
        ts = np.full(n_valid, batch.time)
        delta, _ = bundle.deform_forward(Tensor(x_s), p_hat, ts)
        x_c = ad.add(Tensor(x_s), delta)
        dist_s, _, _, _, _ = bundle.sdf_forward(x_c)
        sdf_term = ad.mean_(ad.abs_(dist_s))
    else:
        sdf_term = Tensor(np.array(0.0))
    loss = ad.add(ad.mul(eik, lambda_eikonal), ad.mul(sdf_term, lambda_sdf_depth))
    return loss, float(eik.data), float(sdf_term.data)
