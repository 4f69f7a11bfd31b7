import numpy as np
import pytest

from deformrecon.camera import (
    FrameSample,
    Intrinsics,
    Pose,
    SceneNormalization,
    backproject,
    backproject_many,
    depth_to_pointcloud,
    normalize_scene,
    pixel_rays,
    project,
)


INTR = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=101, height=101)


def random_pose(rng):
    # QR of a random matrix gives an orthonormal frame; fix the sign for det +1
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return Pose(q, rng.normal(size=3))


def test_backproject_principal_point():
    assert np.allclose(backproject(50.0, 50.0, 2.0, INTR), [0.0, 0.0, 2.0])


def test_backproject_hand_case():
    # fx=fy=100, cx=cy=50: (60, 50) at depth 2 -> ((60-50)*2/100, 0, 2)
    assert np.allclose(backproject(60.0, 50.0, 2.0, INTR), [0.2, 0.0, 2.0])


def test_backproject_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        backproject(10.0, 10.0, 0.0, INTR)
    with pytest.raises(ValueError):
        backproject(10.0, 10.0, -1.0, INTR)


def test_project_backproject_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = rng.uniform(0, INTR.width - 1)
        v = rng.uniform(0, INTR.height - 1)
        d = rng.uniform(0.1, 10.0)
        uv = project(backproject(u, v, d, INTR), INTR)
        assert np.abs(uv - [u, v]).max() < 1e-9


def test_backproject_project_round_trip():
    rng = np.random.default_rng(1)
    pts = np.stack([rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20), rng.uniform(0.5, 5, 20)], axis=1)
    uv = project(pts, INTR)
    back = backproject_many(uv[:, 0], uv[:, 1], pts[:, 2], INTR)
    assert np.abs(back - pts).max() < 1e-9


def test_pointcloud_single_pixel():
    depth = np.zeros((101, 101))
    mask = np.zeros((101, 101), dtype=bool)
    depth[50, 50] = 1.0
    mask[50, 50] = True
    frame = FrameSample(np.zeros((101, 101, 3)), depth, mask, Pose.identity(), 0.0)
    cloud = depth_to_pointcloud(frame, INTR)
    assert cloud.shape == (1, 3)
    assert np.allclose(cloud[0], [0.0, 0.0, 1.0])


def test_pointcloud_empty_mask():
    frame = FrameSample(
        np.zeros((101, 101, 3)), np.ones((101, 101)), np.zeros((101, 101), dtype=bool),
        Pose.identity(), 0.0,
    )
    assert depth_to_pointcloud(frame, INTR).shape == (0, 3)


def test_pointcloud_rigid_equivariance():
    rng = np.random.default_rng(2)
    depth = rng.uniform(1.0, 2.0, size=(101, 101))
    mask = rng.uniform(size=(101, 101)) > 0.5
    img = np.zeros((101, 101, 3))
    base = FrameSample(img, depth, mask, Pose.identity(), 0.0)
    cloud0 = depth_to_pointcloud(base, INTR)
    pose = random_pose(rng)
    moved = FrameSample(img, depth, mask, pose, 0.0)
    cloud1 = depth_to_pointcloud(moved, INTR)
    assert np.abs(cloud1 - pose.camera_to_world(cloud0)).max() < 1e-12


def test_pixel_rays_principal_point_and_norm():
    origins, dirs = pixel_rays(INTR, Pose.identity(), [(50.0, 50.0), (150.0, 50.0)])
    assert np.allclose(origins, 0.0)
    assert np.allclose(dirs[0], [0.0, 0.0, 1.0])
    # cx + fx, cy -> direction proportional to (1, 0, 1)
    assert np.allclose(dirs[1], np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0))
    assert np.abs(np.linalg.norm(dirs, axis=1) - 1.0).max() < 1e-12


def test_normalize_scene_sphere():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = 2.0 * d
    norm = normalize_scene([pts])
    assert np.abs(norm.center).max() < 0.1
    normed = norm.apply(pts)
    assert np.linalg.norm(normed, axis=1).max() <= 1.0 + 1e-12


def test_normalize_scene_invariant_holds_on_input():
    rng = np.random.default_rng(4)
    clouds = [rng.normal(size=(50, 3)) * rng.uniform(0.1, 5) for _ in range(4)]
    norm = normalize_scene(clouds)
    for c in clouds:
        assert np.linalg.norm(norm.apply(c), axis=1).max() <= 1.0 + 1e-12


def test_normalize_scene_degenerate_single_point():
    norm = normalize_scene([np.array([[1.0, 2.0, 3.0]])])
    assert norm.scale == 1.0
    assert np.allclose(norm.center, [1.0, 2.0, 3.0])


def test_normalize_scene_rejects_empty():
    with pytest.raises(ValueError):
        normalize_scene([np.zeros((0, 3))])


def test_pose_validation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, np.zeros(3))
    flip = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose(flip, np.zeros(3))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
    with pytest.raises(ValueError):
        Intrinsics(fx=1.0, fy=1.0, cx=20.0, cy=0.0, width=10, height=10)


def test_frame_sample_validation():
    with pytest.raises(ValueError):
        FrameSample(np.zeros((4, 4, 3)), np.zeros((4, 4)), np.ones((4, 4), dtype=bool),
                    Pose.identity(), 0.0)  # masked pixels with zero depth
    with pytest.raises(ValueError):
        FrameSample(np.zeros((4, 5, 3)), np.zeros((4, 4)), np.zeros((4, 4), dtype=bool),
                    Pose.identity(), 0.0)


def test_scene_normalization_round_trip():
    sn = SceneNormalization(np.array([1.0, -2.0, 3.0]), 0.25)
    pts = np.random.default_rng(5).normal(size=(10, 3))
    assert np.allclose(sn.unapply(sn.apply(pts)), pts, atol=1e-12)
    sn2 = SceneNormalization.from_dict(sn.to_dict())
    assert sn2.scale == sn.scale and np.array_equal(sn2.center, sn.center)
