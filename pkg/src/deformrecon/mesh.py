"""Triangle meshes: marching-cubes extraction, deformation posing, PLY I/O.

Marching cubes uses the standard 256-case tables with linear edge
interpolation; vertices are deduplicated exactly by global lattice-edge id,
so shared edges produce shared vertices without float hashing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .fields import MAX_EXCURSION, FieldBundle, deform_points
from .render import TrackConditioner


@dataclass
class TriangleMesh:
    vertices: np.ndarray               # (v, 3)
    triangles: np.ndarray              # (f, 3) int
    colors: np.ndarray | None = None   # (v, 3) in [0, 1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise ValueError("TriangleMesh: one color per vertex required")
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("TriangleMesh: triangle index out of range")
            degen = (
                (self.triangles[:, 0] == self.triangles[:, 1])
                | (self.triangles[:, 1] == self.triangles[:, 2])
                | (self.triangles[:, 0] == self.triangles[:, 2])
            )
            if degen.any():
                raise ValueError("TriangleMesh: degenerate triangle (repeated vertex index)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def marching_cubes(sdf_fn, bounds, resolution: int,
                   chunk: int = 65536) -> TriangleMesh:
    """Triangulate the zero level set of `sdf_fn` over an axis-aligned box.

    `sdf_fn` maps (m, 3) points to (m,) values (negative inside); `bounds`
    is (lo, hi) per axis; `resolution` counts cells per axis. No sign change
    anywhere yields an empty mesh.
    """
    if resolution < 8:
        raise ValueError("marching_cubes: resolution must be at least 8")
    lo = np.asarray(bounds[0], dtype=np.float64).reshape(3)
    hi = np.asarray(bounds[1], dtype=np.float64).reshape(3)
    if not (hi > lo).all():
        raise ValueError("marching_cubes: empty bounds")
    n = resolution
    axes = [np.linspace(lo[i], hi[i], n + 1) for i in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    values = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        values[start : start + chunk] = np.asarray(
            sdf_fn(pts[start : start + chunk])).reshape(-1)
    values = values.reshape(n + 1, n + 1, n + 1)

    tris_edges = kernels.mc_cells(values, n)
    if len(tris_edges) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    edge_ids, tri_idx = np.unique(tris_edges.reshape(-1), return_inverse=True)
    base = edge_ids // 3
    axis = edge_ids % 3
    m = n + 1
    i = base // (m * m)
    j = (base // m) % m
    k = base % m
    p0 = np.stack([axes[0][i], axes[1][j], axes[2][k]], axis=1)
    step = np.array([(hi[0] - lo[0]) / n, (hi[1] - lo[1]) / n, (hi[2] - lo[2]) / n])
    p1 = p0.copy()
    p1[np.arange(len(p1)), axis] += step[axis]
    v0 = values[i, j, k]
    i2 = i + (axis == 0)
    j2 = j + (axis == 1)
    k2 = k + (axis == 2)
    v1 = values[i2, j2, k2]
    # linear zero crossing: p = p0 + (-v0 / (v1 - v0)) * (p1 - p0)
    t = (-v0 / (v1 - v0))[:, None]
    verts = p0 + t * (p1 - p0)
    return TriangleMesh(verts, tri_idx.reshape(-1, 3))


def deform_mesh(mesh: TriangleMesh, bundle: FieldBundle, time: float,
                conditioner: TrackConditioner, frame_index: int,
                iters: int = 10) -> TriangleMesh:
    """Pose the canonical mesh at a time step.

    The field maps observation -> canonical, so posing inverts it per vertex
    by the fixed-point iteration x <- v - psi(x, t) (10 rounds; contractive
    for small deformations), keeping the smallest-residual iterate.
    Connectivity and colors are untouched.
    """
    if len(mesh.vertices) == 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy(),
                            None if mesh.colors is None else mesh.colors.copy())
    v = mesh.vertices
    ts = np.full(len(v), float(time))
    x = v.copy()
    best_x = x.copy()
    best_resid = np.full(len(v), np.inf)
    for _ in range(iters + 1):
        p_hat = conditioner(x, frame_index)
        delta = deform_points(bundle, x, p_hat, ts)
        resid = np.linalg.norm(x + delta - v, axis=1)
        admissible = np.linalg.norm(x - v, axis=1) <= MAX_EXCURSION
        better = admissible & (resid < best_resid)
        best_resid[better] = resid[better]
        best_x[better] = x[better]
        x = v - delta
    return TriangleMesh(best_x, mesh.triangles.copy(),
                        None if mesh.colors is None else mesh.colors.copy())


# ---------------------------------------------------------------------------
# ASCII PLY
# ---------------------------------------------------------------------------

class PlyError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"PLY line {line}: {message}")


def export_ply(mesh: TriangleMesh, path):
    """ASCII PLY with the fixed header order; colors as uchar when present."""
    with open(path, "w") as f:
        f.write("ply\n")
        f.write("format ascii 1.0\n")
        f.write(f"element vertex {mesh.n_vertices}\n")
        f.write("property float x\n")
        f.write("property float y\n")
        f.write("property float z\n")
        if mesh.colors is not None:
            f.write("property uchar red\n")
            f.write("property uchar green\n")
            f.write("property uchar blue\n")
        f.write(f"element face {mesh.n_triangles}\n")
        f.write("property list uchar int vertex_indices\n")
        f.write("end_header\n")
        if mesh.colors is not None:
            cols = np.clip(np.round(mesh.colors * 255.0), 0, 255).astype(int)
            for p, c in zip(mesh.vertices, cols):
                f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}\n")
        else:
            for p in mesh.vertices:
                f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for tri in mesh.triangles:
            f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")


def import_ply(path) -> TriangleMesh:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyError(1, "missing 'ply' magic")
    n_vertex = n_face = None
    has_color = False
    body_start = None
    element_order = []
    for ln, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise PlyError(ln, f"unsupported format {' '.join(tok[1:])!r}")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyError(ln, "malformed element declaration")
            element_order.append(tok[1])
            if tok[1] == "vertex":
                n_vertex = int(tok[2])
            elif tok[1] == "face":
                n_face = int(tok[2])
            else:
                raise PlyError(ln, f"unsupported element {tok[1]!r}")
        elif tok[0] == "property":
            if tok[-1] in ("red", "green", "blue"):
                has_color = True
        elif tok[0] == "end_header":
            body_start = ln
            break
        elif tok[0] == "comment":
            continue
        else:
            raise PlyError(ln, f"unexpected header token {tok[0]!r}")
    if body_start is None:
        raise PlyError(len(lines), "missing end_header")
    if n_vertex is None or n_face is None:
        raise PlyError(body_start, "header lacks vertex/face element counts")
    if element_order != ["vertex", "face"]:
        raise PlyError(body_start, "elements must be declared vertex then face")
    if len(lines) - body_start < n_vertex + n_face:
        raise PlyError(len(lines), "body shorter than declared element counts")
    verts = np.zeros((n_vertex, 3))
    colors = np.zeros((n_vertex, 3)) if has_color else None
    for i in range(n_vertex):
        ln = body_start + 1 + i
        tok = lines[ln - 1].split()
        want = 6 if has_color else 3
        if len(tok) != want:
            raise PlyError(ln, f"expected {want} vertex fields, got {len(tok)}")
        try:
            verts[i] = [float(t) for t in tok[:3]]
            if has_color:
                colors[i] = [int(t) / 255.0 for t in tok[3:6]]
        except ValueError as e:
            raise PlyError(ln, f"bad vertex value ({e})")
    tris = np.zeros((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        ln = body_start + 1 + n_vertex + i
        tok = lines[ln - 1].split()
        if not tok or tok[0] != "3" or len(tok) != 4:
            raise PlyError(ln, "only triangle faces are supported")
        try:
            tris[i] = [int(t) for t in tok[1:4]]
        except ValueError as e:
            raise PlyError(ln, f"bad face index ({e})")
    try:
        return TriangleMesh(verts, tris, colors)
    except ValueError as e:
        raise PlyError(body_start + 1, str(e))
