"""Run configuration: one JSON document, CLI flags win over file values.

Validation reports the offending field path (e.g. "train.iterations: must be
a positive integer") and never touches outputs before passing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .synthetic import BumpSceneConfig
from .trainer import TrainConfig

CONFIG_FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: str = "scene"
    tracks: str = "oracle"          # "oracle" = the scene's tracks.json
    grid_hg: int = 16
    grid_wg: int = 16
    image_height: int = 64
    image_width: int = 64
    out: str = "out"
    seed: int = 0
    synth_frames: int = 8
    synth_amplitude: float = 0.1
    synth_sigma: float = 0.2
    synth_plane_depth: float = 1.0
    synth_occluder: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_samples: int = 24
    eval_split: str = "test"
    mesh_resolution: int = 48

    def scene_config(self) -> BumpSceneConfig:
        return BumpSceneConfig(
            height=self.image_height, width=self.image_width, frames=self.synth_frames,
            amplitude=self.synth_amplitude, sigma=self.synth_sigma,
            plane_depth=self.synth_plane_depth, occluder=self.synth_occluder,
            texture_seed=self.seed + 11,
        )

    def to_json(self) -> str:
        doc = {
            "format_version": CONFIG_FORMAT_VERSION,
            "scene": self.scene,
            "tracks": self.tracks,
            "grid": {"hg": self.grid_hg, "wg": self.grid_wg},
            "image": {"height": self.image_height, "width": self.image_width},
            "out": self.out,
            "seed": self.seed,
            "synth": {
                "frames": self.synth_frames,
                "amplitude": self.synth_amplitude,
                "sigma": self.synth_sigma,
                "plane_depth": self.synth_plane_depth,
                "occluder": self.synth_occluder,
            },
            "train": asdict(self.train),
            "eval": {"samples": self.eval_samples, "split": self.eval_split},
            "mesh": {"resolution": self.mesh_resolution},
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _expect(doc: dict, path: str, key: str, kind, required=False, default=None):
    if key not in doc:
        if required:
            raise ConfigError(f"{path}{key}: required field missing")
        return default
    val = doc[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{path}{key}: must be an integer, got {val!r}")
    if not isinstance(val, kind):
        raise ConfigError(f"{path}{key}: expected {kind.__name__}, got {val!r}")
    return val


def load_config(path) -> RunConfig:
    """Parse and structurally validate a config file."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON ({e})")
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    version = doc.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"format_version: expected {CONFIG_FORMAT_VERSION}, got {version!r}")
    cfg = RunConfig()
    cfg.scene = _expect(doc, "", "scene", str, default=cfg.scene)
    cfg.tracks = _expect(doc, "", "tracks", str, default=cfg.tracks)
    cfg.out = _expect(doc, "", "out", str, default=cfg.out)
    cfg.seed = _expect(doc, "", "seed", int, required=True)
    grid = doc.get("grid", {})
    cfg.grid_hg = _expect(grid, "grid.", "hg", int, default=cfg.grid_hg)
    cfg.grid_wg = _expect(grid, "grid.", "wg", int, default=cfg.grid_wg)
    image = doc.get("image", {})
    cfg.image_height = _expect(image, "image.", "height", int, default=cfg.image_height)
    cfg.image_width = _expect(image, "image.", "width", int, default=cfg.image_width)
    synth = doc.get("synth", {})
    cfg.synth_frames = _expect(synth, "synth.", "frames", int, default=cfg.synth_frames)
    cfg.synth_amplitude = _expect(synth, "synth.", "amplitude", float, default=cfg.synth_amplitude)
    cfg.synth_sigma = _expect(synth, "synth.", "sigma", float, default=cfg.synth_sigma)
    cfg.synth_plane_depth = _expect(synth, "synth.", "plane_depth", float, default=cfg.synth_plane_depth)
    cfg.synth_occluder = _expect(synth, "synth.", "occluder", bool, default=cfg.synth_occluder)
    tr = doc.get("train", {})
    kwargs = {}
    int_fields = ("iterations", "rays_per_batch", "samples_per_ray", "seed")
    float_fields = ("bound_radius", "learning_rate", "lr_decay", "lambda_color",
                    "lambda_depth", "lambda_eikonal", "lambda_sdf_depth", "p_clear",
                    "near", "far")
    for name in int_fields:
        v = _expect(tr, "train.", name, int)
        if v is not None:
            kwargs[name] = v
    for name in float_fields:
        if name in tr and tr[name] is None:
            continue
        v = _expect(tr, "train.", name, float)
        if v is not None:
            kwargs[name] = v
    if "zero_track_conditioning" in tr:
        kwargs["zero_track_conditioning"] = _expect(tr, "train.", "zero_track_conditioning", bool)
    kwargs.setdefault("seed", cfg.seed)
    try:
        cfg.train = TrainConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"train: {e}")
    ev = doc.get("eval", {})
    cfg.eval_samples = _expect(ev, "eval.", "samples", int, default=cfg.eval_samples)
    cfg.eval_split = _expect(ev, "eval.", "split", str, default=cfg.eval_split)
    mesh = doc.get("mesh", {})
    cfg.mesh_resolution = _expect(mesh, "mesh.", "resolution", int, default=cfg.mesh_resolution)
    validate_values(cfg)
    return cfg


def validate_values(cfg: RunConfig):
    """Range validation shared by file- and flag-built configs."""
    checks = [
        ("grid.hg", cfg.grid_hg, cfg.grid_hg >= 2),
        ("grid.wg", cfg.grid_wg, cfg.grid_wg >= 2),
        ("image.height", cfg.image_height, cfg.image_height >= 8),
        ("image.width", cfg.image_width, cfg.image_width >= 8),
        ("synth.frames", cfg.synth_frames, cfg.synth_frames >= 2),
        ("synth.amplitude", cfg.synth_amplitude, cfg.synth_amplitude >= 0),
        ("synth.sigma", cfg.synth_sigma, cfg.synth_sigma > 0),
        ("eval.samples", cfg.eval_samples, cfg.eval_samples >= 2),
        ("mesh.resolution", cfg.mesh_resolution, cfg.mesh_resolution >= 8),
    ]
    for path, value, ok in checks:
        if not ok:
            raise ConfigError(f"{path}: value {value!r} out of range")
    if cfg.eval_split not in ("train", "test", "all"):
        raise ConfigError(f"eval.split: must be train, test or all, got {cfg.eval_split!r}")
    if cfg.grid_hg > cfg.image_height or cfg.grid_wg > cfg.image_width:
        raise ConfigError("grid: keypoint grid cannot exceed the image size")


def require_scene(cfg: RunConfig):
    if not Path(cfg.scene).is_dir():
        raise ConfigError(f"scene: directory {cfg.scene!r} does not exist")


def resolve_tracks_path(cfg: RunConfig) -> Path:
    if cfg.tracks == "oracle":
        path = Path(cfg.scene) / "tracks.json"
    else:
        path = Path(cfg.tracks)
    if not path.is_file():
        raise ConfigError(f"tracks: file {str(path)!r} does not exist")
    return path
