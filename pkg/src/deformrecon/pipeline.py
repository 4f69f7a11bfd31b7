"""Pipeline stages shared by the CLI and the acceptance suite.

Glue between modules: track densification, full-frame rendering, predicted
deformation fields (fixed-point inversion of the observation-to-canonical
map), metric evaluation against analytic or depth-derived ground truth, and
the file-producing stage runners behind the CLI commands. Stage outputs are
atomic (written to a temp sibling, then renamed), so an interrupted stage
never corrupts earlier artifacts.
"""

from __future__ import annotations

import os
import shutil
from pathlib import Path

import numpy as np

from .camera import FrameSample, Intrinsics, backproject_many
from .fields import MAX_EXCURSION, FieldBundle, deform_points
from .metrics import MetricReport, deformation_errors, gt_deformation_from_depth, psnr, ssim
from .render import RayBatch, TrackConditioner, ray_sphere_bounds, render_rays
from .tracking import TrackGrid, densify_sequence, to_displacements
from .trainer import split_frames

FIXED_POINT_ITERS = 10


def densify_tracks(tracks: TrackGrid, h: int, w: int) -> np.ndarray:
    """Sparse tracks -> (T, H, W, 2) dense displacement fields (pixels)."""
    return densify_sequence(to_displacements(tracks), h, w)


def make_conditioner(bundle: FieldBundle, dense_fields: np.ndarray, intr: Intrinsics,
                     ref_pose) -> TrackConditioner:
    norm = bundle.normalization
    if norm is None:
        raise ValueError("bundle has no scene normalization; train before evaluating")
    return TrackConditioner(dense_fields, intr, ref_pose, norm,
                            zero=bundle.cfg.zero_track_conditioning)


def render_frame(bundle: FieldBundle, frame: FrameSample, intr: Intrinsics,
                 conditioner: TrackConditioner, n_samples: int = 24,
                 bound_radius: float = 1.0, chunk: int = 2048):
    """Render every foreground pixel of a frame (deterministic midpoint sampling).

    Returns (image, depth, rendered_mask): non-foreground pixels carry the
    ground-truth color and zero depth; rays missing the scene bounds are
    dropped from the rendered mask.
    """
    from .camera import pixel_rays

    norm = bundle.normalization
    h, w = frame.depth.shape
    image = frame.image.copy()
    depth = np.zeros((h, w))
    rendered = np.zeros((h, w), dtype=bool)
    vs, us = np.nonzero(frame.mask)
    if len(vs) == 0:
        return image, depth, rendered
    pixels = np.stack([us, vs], axis=1).astype(np.float64)
    origins_w, dirs = pixel_rays(intr, frame.pose, pixels)
    origins = norm.apply(origins_w)
    _, _, hit = ray_sphere_bounds(origins, dirs, bound_radius)
    vs, us = vs[hit], us[hit]
    origins, dirs = origins[hit], dirs[hit]
    for lo in range(0, len(vs), chunk):
        sl = slice(lo, lo + chunk)
        batch = RayBatch(origins[sl], dirs[sl], np.zeros((len(origins[sl]), 3)),
                         np.zeros(len(origins[sl])), float(frame.time), frame.index)
        out = render_rays(bundle, batch, conditioner, n_samples, None,
                          bound_radius=bound_radius)
        image[vs[sl], us[sl]] = out.color.data
        depth[vs[sl], us[sl]] = out.depth.data
    rendered[vs, us] = True
    return image, depth, rendered


def predict_deformation(bundle: FieldBundle, ref_frame: FrameSample, intr: Intrinsics,
                        conditioner: TrackConditioner, time: float, frame_index: int,
                        iters: int = FIXED_POINT_ITERS, p_clear: float = 0.0,
                        clear_rng: np.random.Generator | None = None):
    """Predicted world-frame displacement of each reference pixel's material point.

    The trained field maps observation -> canonical; the observed position of
    a canonical anchor m solves x + psi(x, t) = m, found by the fixed-point
    iteration x <- m - psi(x, t) (contractive for small deformations). The
    predicted displacement is x - m, converted back to world units.

    The iteration is safeguarded: only iterates within MAX_EXCURSION of the
    anchor compete, and the smallest-residual one wins, so local divergence
    cannot return unbounded displacements. `p_clear` reproduces the
    input-clearing corruption at inference: each point is zeroed with that
    probability for the whole solve.

    Returns (field (H, W, 3), valid (H, W)).
    """
    norm = bundle.normalization
    h, w = ref_frame.depth.shape
    valid = ref_frame.mask & (ref_frame.depth > 0)
    field = np.zeros((h, w, 3))
    if not valid.any():
        return field, valid
    if p_clear > 0.0 and clear_rng is None:
        clear_rng = np.random.default_rng(0)
    vs, us = np.nonzero(valid)
    m_world = ref_frame.pose.camera_to_world(
        backproject_many(us.astype(np.float64), vs.astype(np.float64),
                         ref_frame.depth[vs, us], intr))
    m = norm.apply(m_world)
    x = m.copy()
    ts = np.full(len(m), time)
    best_x = x.copy()
    best_resid = np.full(len(m), np.inf)
    # a cleared point stays cleared for the whole solve: the corruption is
    # the loss of that datum, not per-query flicker the best-residual
    # selection could filter out
    cleared = None
    if p_clear > 0.0:
        cleared = clear_rng.uniform(size=len(m)) < p_clear
    for _ in range(iters + 1):
        p_hat = conditioner(x, frame_index)
        x_fed = x
        if cleared is not None:
            x_fed = np.where(cleared[:, None], 0.0, x)
        delta = deform_points(bundle, x_fed, p_hat, ts)
        resid = np.linalg.norm(x + delta - m, axis=1)
        admissible = np.linalg.norm(x - m, axis=1) <= MAX_EXCURSION
        better = admissible & (resid < best_resid)
        best_resid[better] = resid[better]
        best_x[better] = x[better]
        x = m - delta
    field[vs, us] = (best_x - m) / norm.scale
    return field, valid


def evaluate_bundle(bundle: FieldBundle, frames: list[FrameSample], intr: Intrinsics,
                    dense_fields: np.ndarray, split: str = "test",
                    gt_deformation_fields: np.ndarray | None = None,
                    n_samples: int = 24, bound_radius: float = 1.0,
                    p_clear: float = 0.0, clear_seed: int = 0) -> MetricReport:
    """MetricReport over a frame split.

    PSNR is computed over foreground pixels, SSIM on full frames with
    non-rendered pixels substituted by ground truth. Deformation error uses
    the shipped analytic GT when available, else the depth-difference proxy;
    predictions come from the fixed-point inversion, in world units. The
    headline MaxSE is the global max over evaluated frames; per-frame values
    sit in the breakdown. `p_clear` evaluates the deformation under the
    input-clearing corruption (the noisy-condition protocol for ablated runs).
    """
    train, test = split_frames(frames)
    chosen = {"train": train, "test": test, "all": frames}[split]
    if not chosen:
        raise ValueError(f"evaluate_bundle: split {split!r} selected no frames")
    conditioner = make_conditioner(bundle, dense_fields, intr, frames[0].pose)
    proxy = None
    if gt_deformation_fields is None:
        proxy = gt_deformation_from_depth(frames, intr, reference=0)
    ref = frames[0]
    rows = []
    mses = []
    for frame in chosen:
        image, _, rendered = render_frame(bundle, frame, intr, conditioner,
                                          n_samples=n_samples, bound_radius=bound_radius)
        frame_psnr = psnr(image, frame.image, 1.0, mask=rendered)
        frame_ssim = ssim(image, frame.image)
        pred, valid = predict_deformation(
            bundle, ref, intr, conditioner, float(frame.time), frame.index,
            p_clear=p_clear,
            clear_rng=np.random.default_rng(clear_seed + frame.index) if p_clear > 0 else None)
        if gt_deformation_fields is not None:
            gt_field = gt_deformation_fields[frame.index]
            eval_mask = valid
        else:
            gt_field, gt_valid = proxy[frame.index]
            eval_mask = valid & gt_valid
        mse, maxse = deformation_errors(pred, gt_field, eval_mask)
        rows.append({
            "frame": frame.index, "time": float(frame.time), "psnr": frame_psnr,
            "ssim": frame_ssim, "deformation_mse": mse, "deformation_maxse": maxse,
        })
        mses.append(mse)
    return MetricReport(
        psnr=float(np.mean([r["psnr"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in rows])),
        deformation_mse=float(np.mean(mses)),
        deformation_maxse=float(max(r["deformation_maxse"] for r in rows)),
        per_frame=rows,
    )


# ---------------------------------------------------------------------------
# CLI stage runners (atomic file outputs)
# ---------------------------------------------------------------------------

class _AtomicDir:
    """Stage a directory next to its target, rename into place on success."""

    def __init__(self, target):
        self.target = Path(target)
        self.tmp = self.target.with_name(self.target.name + f".tmp-{os.getpid()}")

    def __enter__(self) -> Path:
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir(parents=True)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            if self.target.exists():
                shutil.rmtree(self.target)
            os.replace(self.tmp, self.target)
        else:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def run_synth(cfg) -> Path:
    """Generate the synthetic scene directory (with GT and oracle tracks)."""
    from .synthetic import BumpScene, write_bump_scene

    scene = BumpScene(cfg.scene_config())
    target = Path(cfg.scene)
    target.parent.mkdir(parents=True, exist_ok=True)
    with _AtomicDir(target) as tmp:
        write_bump_scene(tmp, scene, grid_hg=cfg.grid_hg, grid_wg=cfg.grid_wg)
    return target


def run_densify(tracks_path, height: int, width: int, out) -> Path:
    """Densify a track file to per-frame 3-channel PFMs (third channel zero)."""
    from .scene_io import write_pfm
    from .tracking import load_tracks

    tracks = load_tracks(tracks_path)
    dense = densify_tracks(tracks, height, width)
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    with _AtomicDir(target) as tmp:
        for i in range(dense.shape[0]):
            padded = np.concatenate(
                [dense[i], np.zeros((height, width, 1))], axis=2)
            write_pfm(tmp / f"{i:06d}.pfm3", padded)
    return target


def _load_scene_and_dense(cfg):
    from .scene_io import load_scene
    from .tracking import load_tracks
    from .config import resolve_tracks_path

    intr, frames = load_scene(cfg.scene)
    tracks = load_tracks(resolve_tracks_path(cfg))
    if tracks.image_hw != (intr.height, intr.width):
        raise ValueError(
            f"tracks image size {tracks.image_hw} does not match scene "
            f"{(intr.height, intr.width)}"
        )
    dense = densify_tracks(tracks, intr.height, intr.width)
    return intr, frames, tracks, dense


def run_train(cfg) -> Path:
    """Train on the 7:1 training split; write checkpoint dir + loss CSV."""
    from .trainer import save_history_csv, train

    intr, frames, _, dense = _load_scene_and_dense(cfg)
    train_split, _ = split_frames(frames)
    bundle, history = train(train_split, intr, dense, cfg.train)
    target = Path(cfg.out)
    target.parent.mkdir(parents=True, exist_ok=True)
    with _AtomicDir(target / "checkpoint") as tmp:
        bundle.save(tmp)
        save_history_csv(tmp / "loss_history.csv", history)
    return target / "checkpoint"


def run_eval(cfg, checkpoint) -> MetricReport:
    """Evaluate a checkpoint on the configured split; write metrics.json."""
    from .scene_io import load_gt_deformation

    intr, frames, _, dense = _load_scene_and_dense(cfg)
    bundle = FieldBundle.load(checkpoint)
    gt_fields = load_gt_deformation(cfg.scene, len(frames))
    # an ablated run is a noisy condition end to end: its evaluation clears
    # deform-net inputs with the same probability it trained under
    report = evaluate_bundle(bundle, frames, intr, dense, split=cfg.eval_split,
                             gt_deformation_fields=gt_fields,
                             n_samples=cfg.eval_samples,
                             bound_radius=cfg.train.bound_radius,
                             p_clear=cfg.train.p_clear, clear_seed=cfg.seed)
    target = Path(cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    tmp = target / f"metrics.json.tmp-{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(report.to_json())
    os.replace(tmp, target / "metrics.json")
    return report


def extract_mesh(bundle: FieldBundle, resolution: int, chunk: int = 65536):
    """Marching cubes over the canonical SDF inside the unit cube."""
    from .fields import sdf_points
    from .mesh import marching_cubes

    return marching_cubes(
        lambda pts: sdf_points(bundle, pts)[0],
        (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0])),
        resolution, chunk=chunk,
    )


def run_mesh(cfg, checkpoint, frame: int | None = None) -> Path:
    """Extract the canonical mesh (or pose it at a frame); write PLY."""
    from .mesh import deform_mesh, export_ply

    from .config import ConfigError

    intr, frames, _, dense = _load_scene_and_dense(cfg)
    bundle = FieldBundle.load(checkpoint)
    mesh = extract_mesh(bundle, cfg.mesh_resolution)
    name = "mesh_canonical.ply"
    if frame is not None:
        if not (0 <= frame < len(frames)):
            raise ConfigError(f"frame: {frame} out of range (scene has {len(frames)})")
        conditioner = make_conditioner(bundle, dense, intr, frames[0].pose)
        mesh = deform_mesh(mesh, bundle, float(frames[frame].time), conditioner, frame)
        name = f"mesh_{frame:06d}.ply"
    target = Path(cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    tmp = target / (name + f".tmp-{os.getpid()}")
    export_ply(mesh, tmp)
    os.replace(tmp, target / name)
    return target / name


def run_visualize(cfg, checkpoint, frame: int) -> tuple[Path, Path]:
    """Color-encoded deformed mesh PLY plus the 2D displacement heatmap PNG."""
    from .mesh import deform_mesh, export_ply
    from .scene_io import write_png_rgb
    from .spatial import build_index
    from .visualize import colorize, flatten_field, heatmap_image, magnitude_scale

    from .config import ConfigError

    intr, frames, _, dense = _load_scene_and_dense(cfg)
    if not (0 <= frame < len(frames)):
        raise ConfigError(f"frame: {frame} out of range (scene has {len(frames)})")
    bundle = FieldBundle.load(checkpoint)
    conditioner = make_conditioner(bundle, dense, intr, frames[0].pose)
    time = float(frames[frame].time)

    # predicted per-reference-pixel deformation drives the color encoding
    pred, valid = predict_deformation(bundle, frames[0], intr, conditioner, time, frame)
    norm = bundle.normalization
    h, w = frames[0].depth.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ref_pts = frames[0].pose.camera_to_world(
        backproject_many(uu, vv, np.where(frames[0].depth > 0, frames[0].depth, 1.0), intr))
    observed = norm.apply(ref_pts + pred)
    vectors_grid = pred * norm.scale  # match mesh space (normalized units)
    positions, vectors = flatten_field(observed, vectors_grid, valid)

    mesh = extract_mesh(bundle, cfg.mesh_resolution)
    mesh = deform_mesh(mesh, bundle, time, conditioner, frame)
    if len(positions):
        # floor the percentile normalization at 1% of the scene scale, so
        # effectively static scenes show as undeformed instead of amplifying
        # sub-resolution prediction noise to full color range
        d_max = max(magnitude_scale(vectors), 0.01)
        mesh = colorize(mesh, build_index(positions), vectors, d_max=d_max)

    mags = np.linalg.norm(dense[frame], axis=-1)
    heat = heatmap_image(mags)

    target = Path(cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    ply_path = target / f"deform_{frame:06d}.ply"
    png_path = target / f"heatmap_{frame:06d}.png"
    tmp_ply = target / (ply_path.name + f".tmp-{os.getpid()}")
    export_ply(mesh, tmp_ply)
    os.replace(tmp_ply, ply_path)
    tmp_png = target / (png_path.name + f".tmp-{os.getpid()}.png")
    write_png_rgb(tmp_png, heat)
    os.replace(tmp_png, png_path)
    return ply_path, png_path


def run_pipeline(cfg, visualize_frame: int | None = None):
    """synth (if the scene is absent) -> densify -> train -> eval -> visualize."""
    from .config import require_scene

    if not Path(cfg.scene).is_dir():
        run_synth(cfg)
    require_scene(cfg)
    from .config import resolve_tracks_path

    tracks_path = resolve_tracks_path(cfg)
    run_densify(tracks_path, cfg.image_height, cfg.image_width,
                Path(cfg.out) / "dense_field")
    ckpt = run_train(cfg)
    report = run_eval(cfg, ckpt)
    if visualize_frame is None:
        import json

        with open(Path(cfg.scene) / "meta.json") as f:
            n = len(json.load(f)["frames"])
        held_out = [i for i in range(n) if i % 8 == 7]
        visualize_frame = held_out[-1] if held_out else n - 1
    run_visualize(cfg, ckpt, visualize_frame)
    return report
