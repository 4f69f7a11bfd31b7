"""Scene directory I/O: meta.json, 8-bit PNGs, and PFM float maps.

Scene layout (one scene per directory):

    meta.json            intrinsics, per-frame 4x4 camera-to-world pose
                         (16 row-major numbers), per-frame time, format_version
    rgb/%06d.png         8-bit color
    depth/%06d.pfm       1-channel PFM, little-endian (negative scale field)
    mask/%06d.png        8-bit, 0 = excluded, 255 = foreground
    gt_deformation/%06d.pfm3   optional 3-channel PFM (synthetic scenes)
    tracks.json          optional oracle track file (synthetic scenes)

PFM payloads are float32 by format definition, so disk round trips are exact
only to float32 (~1e-7 relative); in-memory pipelines keep float64.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import FrameSample, Intrinsics, Pose

META_FORMAT_VERSION = 1


class SceneFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, array: np.ndarray):
    """Write a (h, w) or (h, w, 3) float map as little-endian PFM.

    Rows are stored bottom-to-top per the PFM convention; the negative scale
    field marks little-endian byte order.
    """
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise SceneFormatError(f"write_pfm: array must be (h, w) or (h, w, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise SceneFormatError(f"{path}: not a PFM file (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise SceneFormatError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(f.read(count * 4), dtype=dtype)
        if data.size != count:
            raise SceneFormatError(f"{path}: truncated PFM payload")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).astype(np.float64)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def write_png_rgb(path, image: np.ndarray):
    """Float [0,1] (h, w, 3) to 8-bit PNG (round-to-nearest quantization)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        u8 = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return u8.astype(np.float64) / 255.0


def write_png_mask(path, mask: np.ndarray):
    u8 = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path)


def read_png_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        u8 = np.asarray(im.convert("L"), dtype=np.uint8)
    return u8 >= 128


# ---------------------------------------------------------------------------
# scene directories
# ---------------------------------------------------------------------------

def _frame_name(i: int) -> str:
    return f"{i:06d}"


def write_scene(path, intr: Intrinsics, frames: list[FrameSample],
                gt_deformation: np.ndarray | None = None,
                tracks_json: str | None = None):
    """Write the standard scene layout; deterministic bytes for fixed inputs."""
    path = Path(path)
    for sub in ("rgb", "depth", "mask"):
        (path / sub).mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": META_FORMAT_VERSION,
        "intrinsics": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
        "frames": [
            {"pose": [float(x) for x in f.pose.matrix4().reshape(-1)], "time": float(f.time)}
            for f in frames
        ],
    }
    with open(path / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    for i, frame in enumerate(frames):
        name = _frame_name(i)
        write_png_rgb(path / "rgb" / f"{name}.png", frame.image)
        write_pfm(path / "depth" / f"{name}.pfm", frame.depth)
        write_png_mask(path / "mask" / f"{name}.png", frame.mask)
    if gt_deformation is not None:
        (path / "gt_deformation").mkdir(exist_ok=True)
        for i in range(gt_deformation.shape[0]):
            write_pfm(path / "gt_deformation" / f"{_frame_name(i)}.pfm3", gt_deformation[i])
    if tracks_json is not None:
        with open(path / "tracks.json", "w") as f:
            f.write(tracks_json)


def load_scene(path):
    """Load a scene directory -> (Intrinsics, list[FrameSample]).

    Loader enforces the frame invariants: the mask is intersected with
    depth > 0, so masked-true pixels always carry valid depth afterwards.
    """
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise SceneFormatError(f"{path}: missing meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("format_version") != META_FORMAT_VERSION:
        raise SceneFormatError(f"{path}: unsupported meta format_version {meta.get('format_version')!r}")
    try:
        mi = meta["intrinsics"]
        intr = Intrinsics(mi["fx"], mi["fy"], mi["cx"], mi["cy"], int(mi["width"]), int(mi["height"]))
        frame_meta = meta["frames"]
    except (KeyError, TypeError) as e:
        raise SceneFormatError(f"{path}: malformed meta.json ({e})")
    frames = []
    for i, fm in enumerate(frame_meta):
        name = _frame_name(i)
        image = read_png_rgb(path / "rgb" / f"{name}.png")
        depth = read_pfm(path / "depth" / f"{name}.pfm")
        mask = read_png_mask(path / "mask" / f"{name}.png")
        if depth.ndim != 2:
            raise SceneFormatError(f"{path}: depth {name} must be single-channel")
        if image.shape[:2] != depth.shape or mask.shape != depth.shape:
            raise SceneFormatError(
                f"{path}: frame {name} image/depth/mask sizes disagree: "
                f"{image.shape[:2]} vs {depth.shape} vs {mask.shape}"
            )
        pose_vals = fm.get("pose")
        if pose_vals is None or len(pose_vals) != 16:
            raise SceneFormatError(f"{path}: frame {name} pose must hold 16 row-major values")
        frames.append(
            FrameSample(
                image=image,
                depth=depth,
                mask=mask & (depth > 0),
                pose=Pose.from_matrix4(np.array(pose_vals).reshape(4, 4)),
                time=float(fm["time"]),
                index=i,
            )
        )
    return intr, frames


def load_gt_deformation(path, n_frames: int) -> np.ndarray | None:
    """Optional per-frame (h, w, 3) GT deformation stack, if shipped."""
    gt_dir = Path(path) / "gt_deformation"
    if not gt_dir.is_dir():
        return None
    fields = []
    for i in range(n_frames):
        p = gt_dir / f"{_frame_name(i)}.pfm3"
        if not p.exists():
            raise SceneFormatError(f"{gt_dir}: missing frame {i} ({p.name})")
        fields.append(read_pfm(p))
    return np.stack(fields)
