"""Vision metrics (PSNR, SSIM) and deformation metrics (MSE, MaxSE).

Deformation ground truth can come from an analytic oracle or from the
depth-difference proxy: per pixel, the world point at frame t minus the
world point at frame 0 (pixel-anchored, both frames' masks required).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .camera import FrameSample, Intrinsics, backproject_many

PSNR_SENTINEL = 99.0
REPORT_FORMAT_VERSION = 1


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0,
         mask: np.ndarray | None = None) -> float:
    """10 log10(max^2 / MSE); identical inputs return the 99 dB sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if max_value <= 0:
        raise ValueError("psnr: max_value must be positive")
    if mask is not None:
        if mask.shape != a.shape[: mask.ndim]:
            raise ValueError(f"psnr: mask shape {mask.shape} incompatible with {a.shape}")
        a = a[mask]
        b = b[mask]
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return float(10.0 * np.log10(max_value * max_value / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _valid_windows(img: np.ndarray, size: int) -> np.ndarray:
    """(H-size+1, W-size+1, size, size) sliding windows (valid mode)."""
    from numpy.lib.stride_tricks import sliding_window_view

    return sliding_window_view(img, (size, size))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, k1: float = 0.01,
         k2: float = 0.03, max_value: float = 1.0, sigma: float = 1.5) -> float:
    """Mean structural similarity with a Gaussian window, valid-mode.

    Color inputs are converted to grayscale by channel mean first.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"ssim: image {a.shape} smaller than the {window}x{window} window")
    k1d = _gaussian_kernel(window, sigma)
    kern = np.outer(k1d, k1d)

    def filt(img):
        return np.einsum("ijkl,kl->ij", _valid_windows(img, window), kern)

    mu_a = filt(a)
    mu_b = filt(b)
    mu_aa = filt(a * a)
    mu_bb = filt(b * b)
    mu_ab = filt(a * b)
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    c1 = (k1 * max_value) ** 2
    c2 = (k2 * max_value) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def deformation_errors(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray):
    """(MSE, MaxSE) of squared displacement error over masked pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[:-1] != mask.shape or pred.shape[-1] != 3:
        raise ValueError(
            f"deformation_errors: shapes disagree: {pred.shape}, {gt.shape}, {mask.shape}"
        )
    if not mask.any():
        raise ValueError("deformation_errors: empty mask")
    err = np.sum((pred - gt) ** 2, axis=-1)[mask]
    return float(err.mean()), float(err.max())


def gt_deformation_from_depth(frames: list[FrameSample], intr: Intrinsics,
                              reference: int = 0):
    """Depth-difference deformation proxy per frame.

    Returns a list of (field (H, W, 3), valid (H, W)); pixels failing either
    frame's mask carry valid=False (never a silent zero).
    """
    ref = frames[reference]
    h, w = ref.depth.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ref_valid = ref.mask & (ref.depth > 0)
    ref_pts = ref.pose.camera_to_world(
        backproject_many(uu, vv, np.where(ref.depth > 0, ref.depth, 1.0), intr))
    out = []
    for f in frames:
        valid = ref_valid & f.mask & (f.depth > 0)
        pts = f.pose.camera_to_world(
            backproject_many(uu, vv, np.where(f.depth > 0, f.depth, 1.0), intr))
        field = np.where(valid[..., None], pts - ref_pts, 0.0)
        out.append((field, valid))
    return out


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    deformation_mse: float
    deformation_maxse: float
    per_frame: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.ssim > 1.0 + 1e-12:
            raise ValueError("MetricReport: ssim above 1")

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": REPORT_FORMAT_VERSION,
                "psnr": self.psnr,
                "ssim": self.ssim,
                "deformation_mse": self.deformation_mse,
                "deformation_maxse": self.deformation_maxse,
                "per_frame": self.per_frame,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        if doc.get("format_version") != REPORT_FORMAT_VERSION:
            raise ValueError(f"MetricReport: unsupported format_version {doc.get('format_version')!r}")
        return cls(
            psnr=doc["psnr"],
            ssim=doc["ssim"],
            deformation_mse=doc["deformation_mse"],
            deformation_maxse=doc["deformation_maxse"],
            per_frame=doc.get("per_frame", []),
        )

    def table(self) -> str:
        """Aligned text table, one row per evaluated frame plus the summary."""
        headers = ["frame", "PSNR", "SSIM", "MSE", "MaxSE"]
        rows = [
            [str(r["frame"]), f"{r['psnr']:.3f}", f"{r['ssim']:.3f}",
             f"{r['deformation_mse']:.6f}", f"{r['deformation_maxse']:.6f}"]
            for r in self.per_frame
        ]
        rows.append(["all", f"{self.psnr:.3f}", f"{self.ssim:.3f}",
                     f"{self.deformation_mse:.6f}", f"{self.deformation_maxse:.6f}"])
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
        for r in rows:
            lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
        return "\n".join(lines)
