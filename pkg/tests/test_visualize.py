import numpy as np
import pytest

from deformrecon.mesh import TriangleMesh
from deformrecon.spatial import build_index
from deformrecon.visualize import (
    ColorMap,
    colorize,
    flatten_field,
    heatmap_image,
    magnitude_scale,
)


def test_colormap_endpoints_and_midpoint():
    cmap = ColorMap()
    assert np.allclose(cmap(0.0), [[0.0, 0.0, 1.0]])
    assert np.allclose(cmap(1.0), [[1.0, 0.0, 0.0]])
    assert np.allclose(cmap(0.5), [[1.0, 1.0, 1.0]])
    assert np.allclose(cmap(0.25), [[0.5, 0.5, 1.0]])


def test_colormap_validation():
    with pytest.raises(ValueError):
        ColorMap(stops=((0.1, (0, 0, 0)), (1.0, (1, 1, 1))))
    with pytest.raises(ValueError):
        ColorMap(stops=((0.0, (0, 0, 0)), (0.5, (1, 1, 1)), (0.5, (0, 0, 0)), (1.0, (1, 1, 1))))


def test_colormap_clamps():
    cmap = ColorMap()
    assert np.allclose(cmap(-3.0), cmap(0.0))
    assert np.allclose(cmap(7.0), cmap(1.0))


def test_flatten_row_major_and_pairing():
    h, w = 3, 4
    pos = np.arange(h * w * 3, dtype=np.float64).reshape(h, w, 3)
    vec = pos * 10.0
    mask = np.ones((h, w), dtype=bool)
    p, v = flatten_field(pos, vec, mask)
    assert len(p) == h * w
    for r in range(h):
        for c in range(w):
            flat = r * w + c
            assert np.array_equal(p[flat], pos[r, c])
            assert np.array_equal(v[flat], vec[r, c])


def test_flatten_empty_mask():
    p, v = flatten_field(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)),
                         np.zeros((2, 2), dtype=bool))
    assert len(p) == 0 and len(v) == 0


def test_flatten_partial_mask_preserves_pairing():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(5, 6, 3))
    vec = rng.normal(size=(5, 6, 3))
    mask = rng.uniform(size=(5, 6)) > 0.4
    p, v = flatten_field(pos, vec, mask)
    assert len(p) == mask.sum()
    k = 0
    for r in range(5):
        for c in range(6):
            if mask[r, c]:
                assert np.array_equal(p[k], pos[r, c])
                assert np.array_equal(v[k], vec[r, c])
                k += 1


def test_flatten_shape_mismatch():
    with pytest.raises(ValueError):
        flatten_field(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), np.ones((2, 2), dtype=bool))


def unit_square_mesh():
    return TriangleMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]),
        np.array([[0, 1, 2], [1, 3, 2]]),
    )


def test_colorize_zero_vectors():
    mesh = unit_square_mesh()
    positions = mesh.vertices + 0.01
    vectors = np.zeros((4, 3))
    idx = build_index(positions)
    out = colorize(mesh, idx, vectors)
    assert np.allclose(out.colors, ColorMap()(0.0))


def test_colorize_exact_position_match():
    mesh = unit_square_mesh()
    positions = mesh.vertices.copy()
    vectors = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.25]])
    idx = build_index(positions)
    out = colorize(mesh, idx, vectors, d_max=1.0)
    cmap = ColorMap()
    assert np.allclose(out.colors[0], cmap(0.0))
    assert np.allclose(out.colors[1], cmap(1.0))
    assert np.allclose(out.colors[2], cmap(0.5))
    assert np.allclose(out.colors[3], cmap(0.25))


def test_colorize_two_clusters():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(50, 3)) * 0.05
    b = rng.normal(size=(50, 3)) * 0.05 + np.array([10.0, 0.0, 0.0])
    positions = np.concatenate([a, b])
    vectors = np.concatenate([np.zeros((50, 3)), np.tile([0.0, 0.0, 2.0], (50, 1))])
    verts = np.concatenate([rng.normal(size=(20, 3)) * 0.05,
                            rng.normal(size=(20, 3)) * 0.05 + np.array([10.0, 0.0, 0.0])])
    tris = np.array([[0, 1, 2]])
    mesh = TriangleMesh(verts, tris)
    out = colorize(mesh, build_index(positions), vectors, d_max=2.0)
    cmap = ColorMap()
    assert np.allclose(out.colors[:20], cmap(0.0))
    assert np.allclose(out.colors[20:], cmap(1.0))


def test_colorize_invariant_under_pair_permutation():
    rng = np.random.default_rng(2)
    positions = rng.normal(size=(80, 3))
    vectors = rng.normal(size=(80, 3))
    mesh = TriangleMesh(rng.normal(size=(30, 3)), np.array([[0, 1, 2]]))
    out1 = colorize(mesh, build_index(positions), vectors)
    perm = rng.permutation(80)
    out2 = colorize(mesh, build_index(positions[perm]), vectors[perm])
    assert np.allclose(out1.colors, out2.colors, atol=1e-12)


def test_magnitude_scale_percentile():
    vecs = np.zeros((100, 3))
    vecs[:, 0] = np.arange(100)
    assert abs(magnitude_scale(vecs) - np.percentile(np.arange(100.0), 99)) < 1e-12


def test_heatmap_dimensions_and_range():
    rng = np.random.default_rng(3)
    mags = np.abs(rng.normal(size=(31, 47)))
    img = heatmap_image(mags)
    assert img.shape == (31, 47, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_heatmap_all_zero():
    img = heatmap_image(np.zeros((5, 5)))
    assert np.allclose(img, ColorMap()(0.0)[0])
