import numpy as np
import pytest

from deformrecon.camera import backproject_many, depth_to_pointcloud
from deformrecon.synthetic import (
    BumpSceneConfig,
    gt_deformation,
    make_bump_scene,
    oracle_tracks,
    render_synthetic_frames,
)
from deformrecon.tracking import sample_grid


def test_config_validation():
    with pytest.raises(ValueError):
        BumpSceneConfig(sigma=0.0)
    with pytest.raises(ValueError):
        BumpSceneConfig(amplitude=-0.1)
    with pytest.raises(ValueError):
        BumpSceneConfig(frames=1)
    with pytest.raises(ValueError):
        BumpSceneConfig(amplitude=2.0, plane_depth=1.0)


def test_zero_amplitude_static_scene():
    scene = make_bump_scene(BumpSceneConfig(amplitude=0.0, frames=4, occluder=False))
    frames, gt = render_synthetic_frames(scene)
    assert np.array_equal(gt.deformation, np.zeros_like(gt.deformation))
    for f in frames[1:]:
        assert np.array_equal(f.depth, frames[0].depth)
        assert np.array_equal(f.image, frames[0].image)


def test_flat_scene_depth_is_plane():
    scene = make_bump_scene(BumpSceneConfig(amplitude=0.0, occluder=False))
    frames, _ = render_synthetic_frames(scene)
    assert np.allclose(frames[0].depth, scene.cfg.plane_depth)


def test_default_peak_deformation_matches_schedule():
    scene = make_bump_scene()
    for i, t in enumerate(scene.times):
        field = gt_deformation(scene, float(t))
        peak = np.linalg.norm(field, axis=-1).max()
        assert abs(peak - scene.amplitude_at(float(t))) < 1e-9


def test_deformation_zero_at_reference_frame():
    scene = make_bump_scene()
    assert np.array_equal(gt_deformation(scene, 0.0), np.zeros((64, 64, 3)))


def test_deformation_decays_far_from_bump():
    scene = make_bump_scene(BumpSceneConfig(sigma=0.05))
    field = gt_deformation(scene, 0.5)
    uu, vv = np.meshgrid(np.arange(64.0), np.arange(64.0))
    m0 = scene.material_points(uu, vv)
    bx, by = scene.bump_center
    r = np.hypot(m0[..., 0] - bx, m0[..., 1] - by)
    mag = np.linalg.norm(field, axis=-1)
    # Gaussian decay bound: |dx| <= a(t) * exp(-r^2 / (2 sigma^2))
    far5 = r >= 5 * scene.cfg.sigma
    assert far5.any()
    assert mag[far5].max() <= scene.amplitude_at(0.5) * np.exp(-12.5) + 1e-15
    far7 = r >= 7 * scene.cfg.sigma
    assert far7.any()
    assert mag[far7].max() < 1e-9


def test_occluder_masks_and_disabled_border():
    scene = make_bump_scene()
    frames, _ = render_synthetic_frames(scene)
    for i, f in enumerate(frames):
        rect = scene.occluder_rect(i)
        u0, v0, u1, v1 = rect
        assert not f.mask[v0:v1, u0:u1].any()
    scene2 = make_bump_scene(BumpSceneConfig(occluder=False))
    frames2, _ = render_synthetic_frames(scene2)
    m = frames2[0].mask
    assert m[1:-1, 1:-1].all()
    assert not m[0, :].any() and not m[-1, :].any()
    assert not m[:, 0].any() and not m[:, -1].any()


def test_depth_backprojection_reproduces_surface():
    scene = make_bump_scene()
    frames, _ = render_synthetic_frames(scene)
    for i in [0, 3, 5]:
        f = frames[i]
        cloud = depth_to_pointcloud(f, scene.intrinsics)
        # cloud points satisfy the height-field equation exactly
        resid = cloud[:, 2] - scene.surface_height(cloud[:, 0], cloud[:, 1], float(f.time))
        assert np.abs(resid).max() < 1e-9


def test_oracle_tracks_static_when_flat():
    scene = make_bump_scene(BumpSceneConfig(amplitude=0.0, occluder=False))
    grid = sample_grid(64, 64, 4, 4)
    tracks = oracle_tracks(scene, grid)
    for t in range(scene.cfg.frames):
        assert np.abs(tracks.points[t] - grid.positions).max() < 1e-12
    assert tracks.visible.all()


def test_oracle_tracks_analytic_projection():
    scene = make_bump_scene()
    grid = sample_grid(64, 64, 8, 8)
    tracks = oracle_tracks(scene, grid)
    t = float(scene.times[3])
    m0 = scene.material_points(grid.positions[..., 0], grid.positions[..., 1])
    mt = scene.material_at_time(m0, t)
    intr = scene.intrinsics
    want_u = intr.fx * mt[..., 0] / mt[..., 2] + intr.cx
    want_v = intr.fy * mt[..., 1] / mt[..., 2] + intr.cy
    assert np.abs(tracks.points[3, ..., 0] - want_u).max() < 1e-12
    assert np.abs(tracks.points[3, ..., 1] - want_v).max() < 1e-12


def test_oracle_tracks_occlusion_flags():
    scene = make_bump_scene()
    grid = sample_grid(64, 64, 16, 16)
    tracks = oracle_tracks(scene, grid)
    hit = False
    for i in range(scene.cfg.frames):
        occ = scene.inside_occluder(tracks.points[i, ..., 0], tracks.points[i, ..., 1], i)
        assert np.array_equal(tracks.visible[i], ~occ)
        hit = hit or occ.any()
    assert hit  # the sweeping tool must cover at least one keypoint somewhere


def test_tracks_depth_deformation_mutual_consistency():
    # lifting a track with the rendered depth reproduces the material point
    scene = make_bump_scene(BumpSceneConfig(occluder=False))
    grid = sample_grid(64, 64, 6, 6)
    tracks = oracle_tracks(scene, grid)
    m0 = scene.material_points(grid.positions[..., 0], grid.positions[..., 1])
    for i, t in enumerate(scene.times):
        uv = tracks.points[i].reshape(-1, 2)
        z = scene.depth_at(uv[:, 0], uv[:, 1], float(t))
        lifted = backproject_many(uv[:, 0], uv[:, 1], z, scene.intrinsics)
        want = scene.material_at_time(m0, float(t)).reshape(-1, 3)
        assert np.abs(lifted - want).max() < 1e-9


def test_scene_determinism():
    a = render_synthetic_frames(make_bump_scene())
    b = render_synthetic_frames(make_bump_scene())
    for fa, fb in zip(a[0], b[0]):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.depth, fb.depth)
    assert np.array_equal(a[1].deformation, b[1].deformation)


def test_times_start_at_zero_and_stay_in_unit_interval():
    scene = make_bump_scene()
    assert scene.times[0] == 0.0
    assert scene.amplitude_at(scene.times[0]) == 0.0
    assert (scene.times >= 0).all() and (scene.times <= 1).all()
