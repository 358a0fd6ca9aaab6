"""Geometric kernels on triangle meshes.

Signed distance queries (BVH-accelerated, exact for the triangle set, sign
from angle-weighted pseudonormals), a deterministic CPU rasterizer whose
per-pixel coverage is an exact ray-triangle test (so it agrees with a
ray-casting oracle pixel for pixel), and the texel left/right symmetry map
used for texture completion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .cameras import DegenerateCameraError, Viewpoint
from .formats import write_float_grid, write_png


class MeshError(ValueError):
    pass


class NotWatertightError(MeshError):
    """Mesh has boundary or inconsistently wound edges; SDF sign undefined."""


class SymmetryUnavailableError(MeshError):
    """Template carries no bilateral symmetry tag."""


# ---------------------------------------------------------------------------
# Mesh container
# ---------------------------------------------------------------------------


def check_watertight(faces: np.ndarray) -> None:
    """Every edge must be shared by exactly two faces with opposite winding."""
    edges: dict[tuple[int, int], int] = {}
    for tri in faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(a), int(b))
            edges[key] = edges.get(key, 0) + 1
    for (a, b), count in edges.items():
        if count != 1:
            raise NotWatertightError(f"directed edge ({a},{b}) used {count} times")
        if (b, a) not in edges:
            raise NotWatertightError(f"edge ({a},{b}) has no opposite-winding twin")


def vertex_normals_from_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Angle-weighted per-vertex normals, unit length."""
    normals = np.zeros_like(vertices)
    tri = vertices[faces]  # (F, 3, 3)
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    fn /= np.maximum(np.linalg.norm(fn, axis=1, keepdims=True), 1e-30)
    for corner in range(3):
        e1 = tri[:, (corner + 1) % 3] - tri[:, corner]
        e2 = tri[:, (corner + 2) % 3] - tri[:, corner]
        cosang = np.einsum("ij,ij->i", e1, e2)
        cosang /= np.maximum(np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-30)
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(normals, faces[:, corner], ang[:, None] * fn)
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-30)
    return normals


@dataclass
class PosedMesh:
    """World-space triangle mesh with per-vertex normals and UV coordinates."""

    vertices: np.ndarray  # V×3
    faces: np.ndarray  # F×3 int
    vertex_normals: np.ndarray  # V×3 unit
    uv_coords: np.ndarray  # V×2 in [0,1]²
    validate: bool = True
    _accel: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.vertex_normals = np.ascontiguousarray(self.vertex_normals, dtype=np.float64)
        self.uv_coords = np.ascontiguousarray(self.uv_coords, dtype=np.float64)
        if self.validate:
            if not np.isfinite(self.vertices).all():
                raise MeshError("non-finite vertices")
            check_watertight(self.faces)
            lens = np.linalg.norm(self.vertex_normals, axis=1)
            if np.abs(lens - 1.0).max() > 1e-5:
                raise MeshError("vertex normals not unit length")

    @classmethod
    def from_geometry(cls, vertices, faces, uv_coords, validate: bool = True) -> "PosedMesh":
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        normals = vertex_normals_from_faces(vertices, faces)
        return cls(vertices, faces, normals, np.asarray(uv_coords, dtype=np.float64), validate)

    def bounds(self, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0) - margin, self.vertices.max(axis=0) + margin

    def _sdf_data(self):
        if "sdf" not in self._accel:
            self._accel["sdf"] = _build_sdf_data(self.vertices, self.faces)
        return self._accel["sdf"]


# ---------------------------------------------------------------------------
# Signed distance field
# ---------------------------------------------------------------------------


def _pseudonormals(vertices: np.ndarray, faces: np.ndarray):
    """Face normals plus angle-weighted vertex and edge pseudonormals.

    Edge normals are stored per face slot (0: v0v1, 1: v0v2, 2: v1v2) so the
    kernel can look them up by the feature code reported by the
    closest-point routine; both faces sharing an edge see the same vector.
    """
    tri = vertices[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    fn /= np.maximum(np.linalg.norm(fn, axis=1, keepdims=True), 1e-30)

    vn = np.zeros_like(vertices)
    for corner in range(3):
        e1 = tri[:, (corner + 1) % 3] - tri[:, corner]
        e2 = tri[:, (corner + 2) % 3] - tri[:, corner]
        cosang = np.einsum("ij,ij->i", e1, e2)
        cosang /= np.maximum(np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-30)
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(vn, faces[:, corner], ang[:, None] * fn)

    edge_acc: dict[tuple[int, int], np.ndarray] = {}
    for f, tri_idx in enumerate(faces):
        for a, b in ((tri_idx[0], tri_idx[1]), (tri_idx[0], tri_idx[2]), (tri_idx[1], tri_idx[2])):
            key = (int(min(a, b)), int(max(a, b)))
            edge_acc[key] = edge_acc.get(key, 0.0) + fn[f]
    en = np.zeros((len(faces), 3, 3))
    for f, tri_idx in enumerate(faces):
        pairs = ((tri_idx[0], tri_idx[1]), (tri_idx[0], tri_idx[2]), (tri_idx[1], tri_idx[2]))
        for k, (a, b) in enumerate(pairs):
            en[f, k] = edge_acc[(int(min(a, b)), int(max(a, b)))]
    return fn, vn, en


def _build_bvh(vertices: np.ndarray, faces: np.ndarray, leaf_size: int = 4):
    """Median-split BVH over triangles; flat int/float arrays for the kernels."""
    tri = vertices[faces]
    tri_min = tri.min(axis=1)
    tri_max = tri.max(axis=1)
    centroids = tri.mean(axis=1)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []
    order = []

    def build(idx: np.ndarray) -> int:
        node = len(node_min)
        node_min.append(tri_min[idx].min(axis=0))
        node_max.append(tri_max[idx].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(-1)
        node_count.append(0)
        if len(idx) <= leaf_size:
            node_start[node] = len(order)
            node_count[node] = len(idx)
            order.extend(int(i) for i in idx)
            return node
        cen = centroids[idx]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        perm = np.argsort(cen[:, axis], kind="stable")
        half = len(idx) // 2
        left = build(idx[perm[:half]])
        right = build(idx[perm[half:]])
        node_left[node] = left
        node_right[node] = right
        return node

    build(np.arange(len(faces)))
    return (
        np.asarray(node_min, dtype=np.float64),
        np.asarray(node_max, dtype=np.float64),
        np.asarray(node_left, dtype=np.int64),
        np.asarray(node_right, dtype=np.int64),
        np.asarray(node_start, dtype=np.int64),
        np.asarray(node_count, dtype=np.int64),
        np.asarray(order, dtype=np.int64),
    )


def _build_sdf_data(vertices: np.ndarray, faces: np.ndarray):
    fn, vn, en = _pseudonormals(vertices, faces)
    bvh = _build_bvh(vertices, faces)
    tri = np.ascontiguousarray(vertices[faces])
    return {"tri": tri, "face_n": fn, "vert_n": vn[faces].copy(), "edge_n": en, "bvh": bvh}


@njit(cache=True)
def _closest_point_triangle(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz):
    """Closest point on triangle abc to p.

    Returns (squared distance, closest x/y/z, feature code):
    0/1/2 vertex a/b/c, 3 edge ab, 4 edge ac, 5 edge bc, 6 interior.
    """
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        dx, dy, dz = px - ax, py - ay, pz - az
        return dx * dx + dy * dy + dz * dz, ax, ay, az, 0

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        dx, dy, dz = px - bx, py - by, pz - bz
        return dx * dx + dy * dy + dz * dz, bx, by, bz, 1

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        w = d1 / (d1 - d3)
        qx, qy, qz = ax + w * abx, ay + w * aby, az + w * abz
        dx, dy, dz = px - qx, py - qy, pz - qz
        return dx * dx + dy * dy + dz * dz, qx, qy, qz, 3

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        dx, dy, dz = px - cx, py - cy, pz - cz
        return dx * dx + dy * dy + dz * dz, cx, cy, cz, 2

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
        dx, dy, dz = px - qx, py - qy, pz - qz
        return dx * dx + dy * dy + dz * dz, qx, qy, qz, 4

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx, qy, qz = bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
        dx, dy, dz = px - qx, py - qy, pz - qz
        return dx * dx + dy * dy + dz * dz, qx, qy, qz, 5

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = ax + abx * v + acx * w
    qy = ay + aby * v + acy * w
    qz = az + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz, qx, qy, qz, 6


@njit(cache=True)
def _box_dist_sq(px, py, pz, lo, hi):
    d = 0.0
    if px < lo[0]:
        d += (lo[0] - px) * (lo[0] - px)
    elif px > hi[0]:
        d += (px - hi[0]) * (px - hi[0])
    if py < lo[1]:
        d += (lo[1] - py) * (lo[1] - py)
    elif py > hi[1]:
        d += (py - hi[1]) * (py - hi[1])
    if pz < lo[2]:
        d += (lo[2] - pz) * (lo[2] - pz)
    elif pz > hi[2]:
        d += (pz - hi[2]) * (pz - hi[2])
    return d


@njit(cache=True)
def _signed_distance_one(
    px, py, pz, tri, face_n, vert_n, edge_n,
    node_min, node_max, node_left, node_right, node_start, node_count, order,
):
    best_d2 = np.inf
    best_tri = -1
    best_feat = -1
    best_x = 0.0
    best_y = 0.0
    best_z = 0.0

    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        # strict pruning keeps equal-distance candidates so the lowest face
        # index wins ties exactly like a full scan
        if _box_dist_sq(px, py, pz, node_min[node], node_max[node]) > best_d2:
            continue
        if node_left[node] < 0:
            start = node_start[node]
            for k in range(node_count[node]):
                t = order[start + k]
                d2, qx, qy, qz, feat = _closest_point_triangle(
                    tri[t, 0, 0], tri[t, 0, 1], tri[t, 0, 2],
                    tri[t, 1, 0], tri[t, 1, 1], tri[t, 1, 2],
                    tri[t, 2, 0], tri[t, 2, 1], tri[t, 2, 2],
                    px, py, pz,
                )
                if d2 < best_d2 or (d2 == best_d2 and t < best_tri):
                    best_d2 = d2
                    best_tri = t
                    best_feat = feat
                    best_x, best_y, best_z = qx, qy, qz
        else:
            stack[top] = node_right[node]
            stack[top + 1] = node_left[node]
            top += 2

    if best_feat == 6:
        nx, ny, nz = face_n[best_tri, 0], face_n[best_tri, 1], face_n[best_tri, 2]
    elif best_feat < 3:
        nx = vert_n[best_tri, best_feat, 0]
        ny = vert_n[best_tri, best_feat, 1]
        nz = vert_n[best_tri, best_feat, 2]
    else:
        slot = best_feat - 3
        nx = edge_n[best_tri, slot, 0]
        ny = edge_n[best_tri, slot, 1]
        nz = edge_n[best_tri, slot, 2]

    s = (px - best_x) * nx + (py - best_y) * ny + (pz - best_z) * nz
    dist = math.sqrt(best_d2)
    return -dist if s < 0.0 else dist


@njit(cache=True)
def _signed_distance_batch(
    queries, tri, face_n, vert_n, edge_n,
    node_min, node_max, node_left, node_right, node_start, node_count, order,
):
    out = np.empty(queries.shape[0])
    for i in range(queries.shape[0]):
        out[i] = _signed_distance_one(
            queries[i, 0], queries[i, 1], queries[i, 2],
            tri, face_n, vert_n, edge_n,
            node_min, node_max, node_left, node_right, node_start, node_count, order,
        )
    return out


def signed_distances(mesh: PosedMesh, queries: np.ndarray) -> np.ndarray:
    """Exact signed distance (negative inside) for an N×3 batch of points."""
    data = mesh._sdf_data()
    q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    return _signed_distance_batch(
        q, data["tri"], data["face_n"], data["vert_n"], data["edge_n"], *data["bvh"]
    )


def signed_distance(mesh: PosedMesh, query) -> float:
    return float(signed_distances(mesh, np.asarray(query, dtype=np.float64)[None, :])[0])


# ---------------------------------------------------------------------------
# Rasterizer
# ---------------------------------------------------------------------------


@dataclass
class RenderMaps:
    """Per-pixel outputs of a rasterization: silhouette = 1 iff depth finite."""

    depth: np.ndarray  # H×W, ray distance in meters, +inf background
    normal: np.ndarray  # H×W×3 camera-space unit normals (0 on background)
    silhouette: np.ndarray  # H×W in {0,1}
    uv: np.ndarray  # H×W×2
    uv_valid: np.ndarray  # H×W bool
    rgb: np.ndarray | None = None  # H×W×3 when textured
    face_index: np.ndarray | None = None  # H×W int, -1 background
    barycentric: np.ndarray | None = None  # H×W×3

    def save(self, directory, prefix: str = "render") -> None:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_float_grid(directory / f"{prefix}_depth.avfd", np.where(np.isfinite(self.depth), self.depth, 0.0))
        write_float_grid(directory / f"{prefix}_normal.avfd", self.normal)
        write_float_grid(directory / f"{prefix}_uv.avfd", self.uv)
        write_png(directory / f"{prefix}_silhouette.png", self.silhouette)
        if self.rgb is not None:
            write_png(directory / f"{prefix}_rgb.png", self.rgb)


@njit(cache=True)
def _raster_faces(tri, origin, dirs, zbuf, fid, bary_u, bary_v, vcam_z, px_x, px_y):
    height, width = dirs.shape[0], dirs.shape[1]
    nfaces = tri.shape[0]
    ox, oy, oz = origin[0], origin[1], origin[2]
    for f in range(nfaces):
        # conservative pixel bounds from the projected vertices; any vertex at
        # or behind the camera plane falls back to the full viewport
        behind = False
        for k in range(3):
            if vcam_z[f, k] >= -1e-9:
                behind = True
        if behind:
            j0, j1, i0, i1 = 0, width - 1, 0, height - 1
        else:
            xmin = min(px_x[f, 0], min(px_x[f, 1], px_x[f, 2]))
            xmax = max(px_x[f, 0], max(px_x[f, 1], px_x[f, 2]))
            ymin = min(px_y[f, 0], min(px_y[f, 1], px_y[f, 2]))
            ymax = max(px_y[f, 0], max(px_y[f, 1], px_y[f, 2]))
            j0 = max(0, int(math.floor(xmin)) - 1)
            j1 = min(width - 1, int(math.ceil(xmax)) + 1)
            i0 = max(0, int(math.floor(ymin)) - 1)
            i1 = min(height - 1, int(math.ceil(ymax)) + 1)
            if j0 > j1 or i0 > i1:
                continue

        ax, ay, az = tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2]
        e1x, e1y, e1z = tri[f, 1, 0] - ax, tri[f, 1, 1] - ay, tri[f, 1, 2] - az
        e2x, e2y, e2z = tri[f, 2, 0] - ax, tri[f, 2, 1] - ay, tri[f, 2, 2] - az
        tvx, tvy, tvz = ox - ax, oy - ay, oz - az

        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                dx, dy, dz = dirs[i, j, 0], dirs[i, j, 1], dirs[i, j, 2]
                pvx = dy * e2z - dz * e2y
                pvy = dz * e2x - dx * e2z
                pvz = dx * e2y - dy * e2x
                det = e1x * pvx + e1y * pvy + e1z * pvz
                if det > -1e-12 and det < 1e-12:
                    continue
                inv = 1.0 / det
                u = (tvx * pvx + tvy * pvy + tvz * pvz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qvx = tvy * e1z - tvz * e1y
                qvy = tvz * e1x - tvx * e1z
                qvz = tvx * e1y - tvy * e1x
                v = (dx * qvx + dy * qvy + dz * qvz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qvx + e2y * qvy + e2z * qvz) * inv
                if t <= 1e-9:
                    continue
                if t < zbuf[i, j]:
                    zbuf[i, j] = t
                    fid[i, j] = f
                    bary_u[i, j] = u
                    bary_v[i, j] = v


def _sample_texture_bilinear(texels: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup; texel (r, c) center sits at uv ((c+0.5)/T, (r+0.5)/T)."""
    t_res = texels.shape[0]
    x = np.clip(uv[..., 0] * t_res - 0.5, 0.0, t_res - 1.0)
    y = np.clip(uv[..., 1] * t_res - 0.5, 0.0, t_res - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, t_res - 1)
    y1 = np.minimum(y0 + 1, t_res - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    c00 = texels[y0, x0]
    c01 = texels[y0, x1]
    c10 = texels[y1, x0]
    c11 = texels[y1, x1]
    return (
        c00 * (1 - fx) * (1 - fy)
        + c01 * fx * (1 - fy)
        + c10 * fx * fy
        + c11 * (1 - fx) * fy
    )


def rasterize(
    mesh: PosedMesh,
    cam: Viewpoint,
    size: tuple[int, int],
    texture=None,
    background=(1.0, 1.0, 1.0),
) -> RenderMaps:
    """Z-buffered perspective render: depth/normal/silhouette/UV (+RGB).

    Depth is the ray distance of the nearest hit; ties at equal depth go to
    the lower face index. Barycentric attribute interpolation uses the
    ray-triangle intersection weights, which are perspective correct.
    """
    height, width = size
    if height < 1 or width < 1:
        raise DegenerateCameraError(f"render size {height}×{width} invalid")
    rot, cam_pos = cam.world_to_camera()
    origins, dirs = cam.pixel_rays(height, width)

    zbuf = np.full((height, width), np.inf)
    fid = np.full((height, width), -1, dtype=np.int64)
    bary_u = np.zeros((height, width))
    bary_v = np.zeros((height, width))

    if len(mesh.faces):
        lo, hi = mesh.bounds()
        if np.all(cam_pos >= lo) and np.all(cam_pos <= hi) and signed_distance(mesh, cam_pos) < 0:
            raise MeshError("camera inside mesh")
        tri = np.ascontiguousarray(mesh.vertices[mesh.faces])
        vcam = (mesh.vertices - cam_pos) @ rot.T
        half = math.tan(math.radians(cam.fov_deg) / 2.0)
        aspect = width / height
        with np.errstate(divide="ignore", invalid="ignore"):
            proj_x = vcam[:, 0] / -vcam[:, 2]
            proj_y = vcam[:, 1] / -vcam[:, 2]
        px_x = ((proj_x / (half * aspect)) + 1.0) * width / 2.0 - 0.5
        px_y = (1.0 - (proj_y / half)) * height / 2.0 - 0.5
        _raster_faces(
            tri,
            np.ascontiguousarray(cam_pos),
            np.ascontiguousarray(dirs),
            zbuf,
            fid,
            bary_u,
            bary_v,
            np.ascontiguousarray(vcam[:, 2][mesh.faces]),
            np.ascontiguousarray(px_x[mesh.faces]),
            np.ascontiguousarray(px_y[mesh.faces]),
        )

    hit = fid >= 0
    w0 = 1.0 - bary_u - bary_v
    bary = np.stack([w0, bary_u, bary_v], axis=-1)
    bary[~hit] = 0.0

    normal = np.zeros((height, width, 3))
    uv = np.zeros((height, width, 2))
    if hit.any():
        face_hit = fid[hit]
        corners = mesh.faces[face_hit]  # (N, 3)
        n = np.einsum("nk,nkd->nd", bary[hit], mesh.vertex_normals[corners])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
        normal[hit] = n @ rot.T
        uv[hit] = np.einsum("nk,nkd->nd", bary[hit], mesh.uv_coords[corners])

    silhouette = hit.astype(np.float64)
    rgb = None
    if texture is not None:
        texels = np.asarray(getattr(texture, "texels", texture), dtype=np.float64)
        rgb = np.broadcast_to(np.asarray(background, dtype=np.float64), (height, width, 3)).copy()
        if hit.any():
            rgb[hit] = _sample_texture_bilinear(texels, uv[hit])

    return RenderMaps(
        depth=zbuf,
        normal=normal,
        silhouette=silhouette,
        uv=uv,
        uv_valid=hit.copy(),
        rgb=rgb,
        face_index=fid,
        barycentric=bary,
    )


# ---------------------------------------------------------------------------
# Texel symmetry map
# ---------------------------------------------------------------------------


def atlas_table(rest_vertices, faces, uv_coords, texture_res: int):
    """Rasterize the UV atlas: per texel the covering face, barycentric
    weights and rest-pose 3D surface point. Overlaps go to the lower face."""
    t_res = texture_res
    face_id = np.full((t_res, t_res), -1, dtype=np.int64)
    bary = np.zeros((t_res, t_res, 3))
    uv = np.asarray(uv_coords, dtype=np.float64)
    centers = (np.arange(t_res) + 0.5) / t_res

    for f, tri_idx in enumerate(np.asarray(faces)):
        a, b, c = uv[tri_idx[0]], uv[tri_idx[1]], uv[tri_idx[2]]
        lo = np.minimum(a, np.minimum(b, c))
        hi = np.maximum(a, np.maximum(b, c))
        c0 = max(0, int(np.floor(lo[0] * t_res - 0.5)))
        c1 = min(t_res - 1, int(np.ceil(hi[0] * t_res - 0.5)) + 1)
        r0 = max(0, int(np.floor(lo[1] * t_res - 0.5)))
        r1 = min(t_res - 1, int(np.ceil(hi[1] * t_res - 0.5)) + 1)
        if c0 > c1 or r0 > r1:
            continue
        us = centers[c0 : c1 + 1][None, :]
        vs = centers[r0 : r1 + 1][:, None]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if abs(det) < 1e-15:
            continue
        w1 = ((us - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (vs - a[1])) / det
        w2 = ((b[0] - a[0]) * (vs - a[1]) - (us - a[0]) * (b[1] - a[1])) / det
        w0 = 1.0 - w1 - w2
        eps = -1e-9
        inside = (w0 >= eps) & (w1 >= eps) & (w2 >= eps)
        block = face_id[r0 : r1 + 1, c0 : c1 + 1]
        fill = inside & (block < 0)
        block[fill] = f
        sub = bary[r0 : r1 + 1, c0 : c1 + 1]
        stacked = np.broadcast_arrays(w0, w1, w2)
        sub[fill] = np.stack(stacked, axis=-1)[fill]

    covered = face_id >= 0
    points = np.zeros((t_res, t_res, 3))
    if covered.any():
        verts = np.asarray(rest_vertices, dtype=np.float64)
        corners = np.asarray(faces)[face_id[covered]]
        points[covered] = np.einsum("nk,nkd->nd", bary[covered], verts[corners])
    return face_id, bary, points


@dataclass
class SymmetryMap:
    """Involutive texel pairing across the template's bilateral plane.

    partner[r, c] holds the flat index (r*T + c) of the mirror texel;
    uncovered texels and texels without a mutual mirror map to themselves.
    """

    partner: np.ndarray  # T×T int64 flat indices
    covered: np.ndarray  # T×T bool, texel maps to a surface point
    resolution: int

    def apply(self, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        flat = self.partner[rows, cols]
        return flat // self.resolution, flat % self.resolution


def build_symmetry_map(template, texture_res: int = 256) -> SymmetryMap:
    """Pair each covered texel with the texel whose rest-pose surface point
    is its mirror image across the template's symmetry plane (x = 0).

    Pairs are kept only when mutual, which makes the map an exact involution;
    texels on the plane (their own nearest mirror) map to themselves.
    """
    plane = getattr(template, "symmetry_plane", None)
    if plane is None:
        raise SymmetryUnavailableError("template carries no bilateral symmetry tag")
    if plane != "x":
        raise SymmetryUnavailableError(f"unsupported symmetry plane {plane!r}")

    face_id, _, points = atlas_table(template.rest_vertices, template.faces, template.uv_coords, texture_res)
    covered = face_id >= 0

    t_res = texture_res
    partner = np.arange(t_res * t_res, dtype=np.int64)
    idx = np.flatnonzero(covered.ravel())
    if len(idx):
        pts = points.reshape(-1, 3)[idx]
        mirrored = pts * np.array([-1.0, 1.0, 1.0])
        tree = cKDTree(pts)
        _, nn = tree.query(mirrored)
        cand = idx[nn]  # flat texel index of nearest mirror
        lookup = np.full(t_res * t_res, -1, dtype=np.int64)
        lookup[idx] = np.arange(len(idx))
        # mutual pairs only: partner(partner(t)) == t
        back = cand[lookup[cand]]
        mutual = back == idx
        partner[idx[mutual]] = cand[mutual]
    return SymmetryMap(partner=partner.reshape(t_res, t_res), covered=covered, resolution=t_res)
