"""deformrecon: track-conditioned deformation fields for RGBD sequences.

The pipeline densifies sparse 2D point tracks into full-resolution
displacement fields, trains a track-conditioned neural deformation field
plus canonical SDF/radiance fields by volume rendering, extracts and poses
meshes, and emits color-encoded deformation visualizations and quantitative
vision/deformation metrics. Analytic synthetic scenes with exact ground
truth verify every stage.
"""

__version__ = "0.1.0"

from .autodiff import ParamStore, Tensor, finite_diff_jacobian, jacobian
from .camera import (FrameSample, Intrinsics, Pose, SceneNormalization,
                     backproject, depth_to_pointcloud, normalize_scene, pixel_rays)
from .fields import (DeformationQuery, FieldBundle, FieldConfig,
                     PositionalEncoding, canonical_view, deform,
                     deform_jacobian, encode, radiance, sdf, sdf_gradient)
from .mesh import TriangleMesh, deform_mesh, export_ply, import_ply, marching_cubes
from .metrics import MetricReport, deformation_errors, psnr, ssim
from .render import RayBatch, RenderResult, TrackConditioner, render_ray, stratified_samples
from .spatial import SpatialIndex, build_index
from .synthetic import BumpScene, BumpSceneConfig, gt_deformation, make_bump_scene, oracle_tracks, render_synthetic_frames
from .tracking import KeypointGrid, TrackGrid, densify, load_tracks, sample_field, sample_grid, to_displacements
from .trainer import TrainConfig, ablate_reference, split_frames, train
from .visualize import ColorMap, colorize, flatten_field, heatmap_image

__all__ = [
    "ParamStore", "Tensor", "finite_diff_jacobian", "jacobian",
    "FrameSample", "Intrinsics", "Pose", "SceneNormalization", "backproject",
    "depth_to_pointcloud", "normalize_scene", "pixel_rays",
    "DeformationQuery", "FieldBundle", "FieldConfig", "PositionalEncoding",
    "canonical_view", "deform", "deform_jacobian", "encode", "radiance", "sdf",
    "sdf_gradient",
    "TriangleMesh", "deform_mesh", "export_ply", "import_ply", "marching_cubes",
    "MetricReport", "deformation_errors", "psnr", "ssim",
    "RayBatch", "RenderResult", "TrackConditioner", "render_ray", "stratified_samples",
    "SpatialIndex", "build_index",
    "BumpScene", "BumpSceneConfig", "gt_deformation", "make_bump_scene",
    "oracle_tracks", "render_synthetic_frames",
    "KeypointGrid", "TrackGrid", "densify", "load_tracks", "sample_field",
    "sample_grid", "to_displacements",
    "TrainConfig", "ablate_reference", "split_frames", "train",
    "ColorMap", "colorize", "flatten_field", "heatmap_image",
]
