"""Parametric skinned humanoid body.

Forward kinematics + linear blend skinning over a 24-joint kinematic tree,
gradient-based refinement of body parameters against normal/silhouette
observations, and the pose-complexity score (mean squared pose-prior
embedding).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cameras import Viewpoint
from .formats import read_float_grid, read_png, write_float_grid, write_png
from .meshes import PosedMesh, check_watertight, rasterize, vertex_normals_from_faces

NUM_JOINTS = 24
NUM_SHAPE = 10


class ParameterDomainError(ValueError):
    """Body parameters outside the valid domain (non-finite, bad shapes)."""


class ObservationError(ValueError):
    """Observation maps inconsistent or unusable (e.g. empty silhouette)."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class BodyParams:
    """Pose (K×3 axis-angle), shape (10 blend coefficients), translation (3)."""

    pose: np.ndarray
    shape: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(-1, 3)
        self.shape = np.asarray(self.shape, dtype=np.float64).reshape(-1)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (
            np.isfinite(self.pose).all()
            and np.isfinite(self.shape).all()
            and np.isfinite(self.translation).all()
        ):
            raise ParameterDomainError("non-finite body parameters")

    @classmethod
    def rest(cls, num_joints: int = NUM_JOINTS, num_shape: int = NUM_SHAPE) -> "BodyParams":
        return cls(np.zeros((num_joints, 3)), np.zeros(num_shape), np.zeros(3))

    def canonicalized(self) -> "BodyParams":
        """Wrap each joint rotation so its angle lies in [0, π]."""
        pose = self.pose.copy()
        angles = np.linalg.norm(pose, axis=1)
        for j, theta in enumerate(angles):
            if theta > math.pi:
                wrapped = theta - 2.0 * math.pi * math.ceil((theta - math.pi) / (2.0 * math.pi))
                pose[j] *= wrapped / theta
        return BodyParams(pose, self.shape.copy(), self.translation.copy())

    def copy(self) -> "BodyParams":
        return BodyParams(self.pose.copy(), self.shape.copy(), self.translation.copy())


@dataclass
class SkinnedTemplate:
    """Rest-pose mesh, skeleton, skinning weights and UV atlas.

    Vertices may contain exact position duplicates along UV seams; geometric
    checks weld those before validating watertightness.
    """

    rest_vertices: np.ndarray  # V×3
    faces: np.ndarray  # F×3
    joint_rest_positions: np.ndarray  # K×3
    kinematic_parents: np.ndarray  # K, parent[root] = -1
    skin_weights: np.ndarray  # V×K, rows sum to 1, ≤4 nonzeros
    shape_basis: np.ndarray  # 10×V×3
    uv_coords: np.ndarray  # V×2
    joint_shape_basis: np.ndarray | None = None  # 10×K×3, zeros when absent
    symmetry_plane: str | None = "x"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.rest_vertices = np.ascontiguousarray(self.rest_vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.joint_rest_positions = np.asarray(self.joint_rest_positions, dtype=np.float64)
        self.kinematic_parents = np.asarray(self.kinematic_parents, dtype=np.int64)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        self.uv_coords = np.asarray(self.uv_coords, dtype=np.float64)
        if self.joint_shape_basis is None:
            self.joint_shape_basis = np.zeros((self.shape_basis.shape[0], self.num_joints, 3))
        else:
            self.joint_shape_basis = np.asarray(self.joint_shape_basis, dtype=np.float64)
        self.validate()

    @property
    def num_vertices(self) -> int:
        return self.rest_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joint_rest_positions.shape[0]

    def validate(self) -> None:
        row_sums = self.skin_weights.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-6:
            raise ParameterDomainError("skin weight rows must sum to 1")
        if int((self.skin_weights != 0).sum(axis=1).max()) > 4:
            raise ParameterDomainError("more than 4 skinning influences on a vertex")
        parents = self.kinematic_parents
        if parents[0] != -1 or np.any(parents[1:] >= np.arange(1, len(parents))):
            # topological order with the root first implies a tree
            raise ParameterDomainError("kinematic parents must form a tree in topological order")
        welded_faces = self.welded_faces()
        check_watertight(welded_faces)

    def welded_faces(self) -> np.ndarray:
        """Faces re-indexed onto position-welded vertices (UV seams merged)."""
        if "welded_faces" not in self._cache:
            _, inverse = np.unique(self.rest_vertices, axis=0, return_inverse=True)
            self._cache["welded_faces"] = inverse[self.faces]
            self._cache["weld_index"] = inverse
        return self._cache["welded_faces"]

    def torch_tensors(self, dtype=torch.float64) -> dict:
        key = ("torch", dtype)
        if key not in self._cache:
            self._cache[key] = {
                "rest": torch.as_tensor(self.rest_vertices, dtype=dtype),
                "joints": torch.as_tensor(self.joint_rest_positions, dtype=dtype),
                "weights": torch.as_tensor(self.skin_weights, dtype=dtype),
                "shape_basis": torch.as_tensor(self.shape_basis, dtype=dtype),
                "joint_shape_basis": torch.as_tensor(self.joint_shape_basis, dtype=dtype),
            }
        return self._cache[key]

    # -- template JSON wire format ------------------------------------------

    def save_json(self, path) -> None:
        sparse_weights = {}
        for v in range(self.num_vertices):
            (joints,) = np.nonzero(self.skin_weights[v])
            sparse_weights[str(v)] = [[int(j), float(self.skin_weights[v, j])] for j in joints]
        doc = {
            "vertices": self.rest_vertices.tolist(),
            "faces": self.faces.tolist(),
            "parents": self.kinematic_parents.tolist(),
            "joints": self.joint_rest_positions.tolist(),
            "weights": sparse_weights,
            "shape_basis": self.shape_basis.tolist(),
            "uv": self.uv_coords.tolist(),
            "joint_shape_basis": self.joint_shape_basis.tolist(),
            "symmetry_plane": self.symmetry_plane,
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load_json(cls, path) -> "SkinnedTemplate":
        doc = json.loads(Path(path).read_text())
        vertices = np.asarray(doc["vertices"], dtype=np.float64)
        num_joints = len(doc["joints"])
        weights = np.zeros((len(vertices), num_joints))
        for v_str, entries in doc["weights"].items():
            for joint, w in entries:
                weights[int(v_str), int(joint)] = w
        return cls(
            rest_vertices=vertices,
            faces=np.asarray(doc["faces"], dtype=np.int64),
            joint_rest_positions=np.asarray(doc["joints"], dtype=np.float64),
            kinematic_parents=np.asarray(doc["parents"], dtype=np.int64),
            skin_weights=weights,
            shape_basis=np.asarray(doc["shape_basis"], dtype=np.float64),
            uv_coords=np.asarray(doc["uv"], dtype=np.float64),
            joint_shape_basis=(
                np.asarray(doc["joint_shape_basis"], dtype=np.float64)
                if "joint_shape_basis" in doc
                else None
            ),
            symmetry_plane=doc.get("symmetry_plane"),
        )


@dataclass
class ImageObservations:
    """Reference-image maps: normals, silhouette, UV correspondences, RGB, depth."""

    normals: np.ndarray  # H×W×3 camera space, unit where valid
    normals_valid: np.ndarray  # H×W bool
    silhouette: np.ndarray  # H×W in {0,1}
    uv_map: np.ndarray  # H×W×2
    uv_valid: np.ndarray  # H×W bool
    reference_rgb: np.ndarray  # H×W×3 in [0,1]
    reference_depth: np.ndarray  # H×W meters
    depth_valid: np.ndarray  # H×W bool

    def __post_init__(self):
        shapes = {
            arr.shape[:2]
            for arr in (
                self.normals,
                self.normals_valid,
                self.silhouette,
                self.uv_map,
                self.uv_valid,
                self.reference_rgb,
                self.reference_depth,
                self.depth_valid,
            )
        }
        if len(shapes) != 1:
            raise ObservationError(f"observation maps disagree on size: {sorted(shapes)}")
        lens = np.linalg.norm(self.normals[self.normals_valid], axis=-1)
        if lens.size and np.abs(lens - 1.0).max() > 1e-4:
            raise ObservationError("observed normals not unit length where valid")

    @property
    def size(self) -> tuple[int, int]:
        return self.silhouette.shape

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_png(directory / "reference_rgb.png", self.reference_rgb)
        write_png(directory / "silhouette.png", self.silhouette)
        normals = np.concatenate([self.normals, self.normals_valid[..., None]], axis=2)
        write_float_grid(directory / "normals.avfd", normals)
        depth = np.stack([np.where(self.depth_valid, self.reference_depth, 0.0), self.depth_valid], axis=2)
        write_float_grid(directory / "depth.avfd", depth)
        uv = np.concatenate([self.uv_map, self.uv_valid[..., None]], axis=2)
        write_float_grid(directory / "uv.avfd", uv)

    @classmethod
    def load(cls, directory) -> "ImageObservations":
        directory = Path(directory)
        normals = read_float_grid(directory / "normals.avfd")
        depth = read_float_grid(directory / "depth.avfd")
        uv = read_float_grid(directory / "uv.avfd")
        return cls(
            normals=normals[..., :3],
            normals_valid=normals[..., 3] > 0.5,
            silhouette=(read_png(directory / "silhouette.png") > 0.5).astype(np.float64),
            uv_map=uv[..., :2],
            uv_valid=uv[..., 2] > 0.5,
            reference_rgb=read_png(directory / "reference_rgb.png"),
            reference_depth=depth[..., 0],
            depth_valid=depth[..., 1] > 0.5,
        )


# ---------------------------------------------------------------------------
# Pose prior encoders
# ---------------------------------------------------------------------------


class IdentityFlattenEncoder:
    """Default pose embedding: the flattened axis-angle vector itself."""

    def encode(self, pose: np.ndarray) -> np.ndarray:
        return np.asarray(pose, dtype=np.float64).reshape(-1)


class LinearPoseEncoder:
    """Linear pose embedding loaded from an .npz with `weight` (+ optional `bias`)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64)

    @classmethod
    def load(cls, path) -> "LinearPoseEncoder":
        data = np.load(path)
        return cls(data["weight"], data["bias"] if "bias" in data else None)

    def encode(self, pose: np.ndarray) -> np.ndarray:
        flat = np.asarray(pose, dtype=np.float64).reshape(-1)
        out = self.weight @ flat
        if self.bias is not None:
            out = out + self.bias
        return out


def pose_complexity(params: BodyParams, encoder=None) -> float:
    """Mean squared entry of the pose-prior embedding of the pose."""
    if encoder is None:
        encoder = IdentityFlattenEncoder()
    embedding = np.asarray(encoder.encode(params.pose), dtype=np.float64)
    return float(np.mean(np.square(embedding)))


# ---------------------------------------------------------------------------
# Linear blend skinning
# ---------------------------------------------------------------------------


def _axis_angle_to_matrix(vec: torch.Tensor) -> torch.Tensor:
    """Rodrigues formula, batched over leading dims; smooth at the origin."""
    theta = torch.linalg.norm(vec, dim=-1, keepdim=True).clamp(min=1e-12)
    axis = vec / theta
    x, y, z = axis.unbind(-1)
    zero = torch.zeros_like(x)
    skew = torch.stack(
        [
            torch.stack([zero, -z, y], -1),
            torch.stack([z, zero, -x], -1),
            torch.stack([-y, x, zero], -1),
        ],
        -2,
    )
    theta = theta.unsqueeze(-1)
    eye = torch.eye(3, dtype=vec.dtype, device=vec.device).expand(skew.shape)
    return eye + torch.sin(theta) * skew + (1.0 - torch.cos(theta)) * (skew @ skew)


def posed_vertices_torch(
    template: SkinnedTemplate,
    pose: torch.Tensor,
    shape: torch.Tensor,
    translation: torch.Tensor,
) -> torch.Tensor:
    """Differentiable LBS: world-space vertices for the given parameters."""
    tensors = template.torch_tensors(pose.dtype)
    rest = tensors["rest"] + torch.einsum("svd,s->vd", tensors["shape_basis"], shape)
    joints = tensors["joints"] + torch.einsum("skd,s->kd", tensors["joint_shape_basis"], shape)

    rot = _axis_angle_to_matrix(pose)  # K×3×3
    parents = template.kinematic_parents
    num_joints = template.num_joints

    world_rot = [rot[0]]
    world_pos = [joints[0]]
    for j in range(1, num_joints):
        p = int(parents[j])
        offset = joints[j] - joints[p]
        world_rot.append(world_rot[p] @ rot[j])
        world_pos.append(world_pos[p] + world_rot[p] @ offset)
    world_rot = torch.stack(world_rot)  # K×3×3
    world_pos = torch.stack(world_pos)  # K×3

    # skinning transform maps rest-space points: x ↦ R_j (x − J_j) + p_j
    t_skin = world_pos - torch.einsum("kij,kj->ki", world_rot, joints)
    weights = tensors["weights"]
    blended_rot = torch.einsum("vk,kij->vij", weights, world_rot)
    blended_t = weights @ t_skin
    posed = torch.einsum("vij,vj->vi", blended_rot, rest) + blended_t
    return posed + translation


def pose_mesh(template: SkinnedTemplate, params: BodyParams) -> PosedMesh:
    """Pose the template; per-vertex normals recomputed on the posed geometry."""
    pose = torch.as_tensor(params.pose, dtype=torch.float64)
    shape = torch.as_tensor(params.shape, dtype=torch.float64)
    trans = torch.as_tensor(params.translation, dtype=torch.float64)
    if pose.shape[0] != template.num_joints:
        raise ParameterDomainError(
            f"pose has {pose.shape[0]} joints, template has {template.num_joints}"
        )
    if shape.shape[0] != template.shape_basis.shape[0]:
        raise ParameterDomainError("shape coefficient count mismatch")
    with torch.no_grad():
        verts = posed_vertices_torch(template, pose, shape, trans).numpy()
    welded_faces = template.welded_faces()
    weld_index = template._cache["weld_index"]
    welded_verts = np.zeros((weld_index.max() + 1, 3))
    welded_verts[weld_index] = verts
    normals = vertex_normals_from_faces(welded_verts, welded_faces)[weld_index]
    return PosedMesh(
        vertices=verts,
        faces=template.faces,
        vertex_normals=normals,
        uv_coords=template.uv_coords,
        validate=False,
    )


# ---------------------------------------------------------------------------
# Soft differentiable observation render (silhouette + normals)
# ---------------------------------------------------------------------------


def _point_triangle_distance_2d(px, py, tri_x, tri_y):
    """Signed 2D distance (negative inside) from P×1 pixel coords to F triangles.

    px/py: (P, 1); tri_x/tri_y: (1, F, 3). Returns (P, F).
    """
    min_d2 = None
    sign_acc = []
    for k in range(3):
        ax, ay = tri_x[..., k], tri_y[..., k]
        bx, by = tri_x[..., (k + 1) % 3], tri_y[..., (k + 1) % 3]
        ex, ey = bx - ax, by - ay
        qx, qy = px - ax, py - ay
        cross = ex * qy - ey * qx
        sign_acc.append(cross)
        t = ((qx * ex + qy * ey) / (ex * ex + ey * ey + 1e-30)).clamp(0.0, 1.0)
        dx, dy = qx - t * ex, qy - t * ey
        d2 = dx * dx + dy * dy
        min_d2 = d2 if min_d2 is None else torch.minimum(min_d2, d2)
    inside = (
        (sign_acc[0] >= 0) & (sign_acc[1] >= 0) & (sign_acc[2] >= 0)
        | (sign_acc[0] <= 0) & (sign_acc[1] <= 0) & (sign_acc[2] <= 0)
    )
    dist = torch.sqrt(min_d2 + 1e-30)
    return torch.where(inside, -dist, dist)


def soft_observation_render(
    verts: torch.Tensor,
    faces: np.ndarray,
    cam: Viewpoint,
    size: tuple[int, int],
    bandwidth_px: float = 2.0,
    depth_sharpness: float = 0.02,
    face_chunk: int = 512,
):
    """Differentiable soft silhouette and aggregated camera-space normals.

    Coverage per face is a sigmoid of the signed pixel distance to the
    projected triangle; normals are blended with coverage × depth-softmax
    weights so nearer surfaces dominate.
    """
    height, width = size
    dtype = verts.dtype
    rot_np, pos_np = cam.world_to_camera()
    rot = torch.as_tensor(rot_np, dtype=dtype)
    pos = torch.as_tensor(pos_np, dtype=dtype)

    v_cam = (verts - pos) @ rot.T
    half = math.tan(math.radians(cam.fov_deg) / 2.0)
    aspect = width / height
    z = (-v_cam[:, 2]).clamp(min=1e-6)
    px = ((v_cam[:, 0] / z) / (half * aspect) + 1.0) * width / 2.0 - 0.5
    py = (1.0 - (v_cam[:, 1] / z) / half) * height / 2.0 - 0.5

    faces_t = torch.as_tensor(faces, dtype=torch.int64)
    tri_x = px[faces_t]  # F×3
    tri_y = py[faces_t]
    tri_cam = v_cam[faces_t]  # F×3×3
    face_depth = -tri_cam[:, :, 2].mean(dim=1)  # positive view distance

    e1 = verts[faces_t[:, 1]] - verts[faces_t[:, 0]]
    e2 = verts[faces_t[:, 2]] - verts[faces_t[:, 0]]
    n_world = torch.cross(e1, e2, dim=1)
    n_world = n_world / torch.linalg.norm(n_world, dim=1, keepdim=True).clamp(min=1e-30)
    n_cam = n_world @ rot.T

    ii, jj = torch.meshgrid(
        torch.arange(height, dtype=dtype), torch.arange(width, dtype=dtype), indexing="ij"
    )
    pix_x = jj.reshape(-1, 1)
    pix_y = ii.reshape(-1, 1)

    depth_ref = face_depth.min().detach()
    log_empty = torch.zeros(height * width, dtype=dtype)
    normal_acc = torch.zeros(height * width, 3, dtype=dtype)
    weight_acc = torch.zeros(height * width, dtype=dtype)
    nfaces = tri_x.shape[0]
    for start in range(0, nfaces, face_chunk):
        end = min(start + face_chunk, nfaces)
        signed = _point_triangle_distance_2d(
            pix_x, pix_y, tri_x[None, start:end], tri_y[None, start:end]
        )
        cover = torch.sigmoid(-signed / bandwidth_px).clamp(max=1.0 - 1e-7)
        log_empty = log_empty + torch.log1p(-cover).sum(dim=1)
        occl = torch.exp((depth_ref - face_depth[start:end]) / depth_sharpness)
        w = cover * occl[None, :]
        normal_acc = normal_acc + w @ n_cam[start:end]
        weight_acc = weight_acc + w.sum(dim=1)

    soft_sil = 1.0 - torch.exp(log_empty)
    normals = normal_acc / (weight_acc + 1e-12).unsqueeze(1)
    return soft_sil.reshape(height, width), normals.reshape(height, width, 3)


def refinement_objective(
    template: SkinnedTemplate,
    pose: torch.Tensor,
    shape: torch.Tensor,
    translation: torch.Tensor,
    obs_normals: torch.Tensor,
    normals_valid: torch.Tensor,
    obs_silhouette: torch.Tensor,
    cam: Viewpoint,
    lambda_normals: float,
    lambda_silhouette: float,
    bandwidth_px: float = 2.0,
) -> torch.Tensor:
    """Soft, differentiable form of the normal/silhouette consistency loss."""
    size = obs_silhouette.shape
    verts = posed_vertices_torch(template, pose, shape, translation)
    soft_sil, soft_normals = soft_observation_render(
        verts, template.faces, cam, size, bandwidth_px=bandwidth_px
    )
    sil_term = (obs_silhouette - soft_sil).abs().mean()
    if normals_valid.any():
        diff = (obs_normals - soft_normals).abs().sum(dim=2)
        normal_term = diff[normals_valid].mean()
    else:
        normal_term = torch.zeros((), dtype=soft_sil.dtype)
    return lambda_normals * normal_term + lambda_silhouette * sil_term


def _downsample_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w = arr.shape[:2]
    hc, wc = h // factor, w // factor
    trimmed = arr[: hc * factor, : wc * factor]
    return trimmed.reshape(hc, factor, wc, factor, *arr.shape[2:]).mean(axis=(1, 3))


def downsample_observations(obs: ImageObservations, factor: int) -> ImageObservations:
    if factor <= 1:
        return obs
    normals = _downsample_mean(np.where(obs.normals_valid[..., None], obs.normals, 0.0), factor)
    valid_frac = _downsample_mean(obs.normals_valid.astype(np.float64), factor)
    normals_valid = valid_frac > 0.5
    lens = np.linalg.norm(normals, axis=2, keepdims=True)
    normals = np.where(normals_valid[..., None] & (lens > 1e-12), normals / np.maximum(lens, 1e-12), 0.0)
    depth_w = _downsample_mean(np.where(obs.depth_valid, obs.reference_depth, 0.0), factor)
    depth_frac = _downsample_mean(obs.depth_valid.astype(np.float64), factor)
    uv_w = _downsample_mean(np.where(obs.uv_valid[..., None], obs.uv_map, 0.0), factor)
    uv_frac = _downsample_mean(obs.uv_valid.astype(np.float64), factor)
    return ImageObservations(
        normals=normals,
        normals_valid=normals_valid,
        silhouette=_downsample_mean(obs.silhouette, factor),
        uv_map=np.where(uv_frac[..., None] > 1e-12, uv_w / np.maximum(uv_frac[..., None], 1e-12), 0.0),
        uv_valid=uv_frac > 0.5,
        reference_rgb=_downsample_mean(obs.reference_rgb, factor),
        reference_depth=np.where(depth_frac > 1e-12, depth_w / np.maximum(depth_frac, 1e-12), 0.0),
        depth_valid=depth_frac > 0.5,
    )


@dataclass
class RefineResult:
    params: BodyParams
    objective_init: float
    objective_final: float
    hard_objective: float
    diverged: bool
    history: list


def refine_params(
    template: SkinnedTemplate,
    init: BodyParams,
    obs: ImageObservations,
    cam: Viewpoint,
    lambda_normals: float = 1.0,
    lambda_silhouette: float = 1.0,
    steps: int = 200,
    lr: float = 1e-2,
    patience: int = 25,
    max_resolution: int = 64,
    optimize_shape: bool = True,
) -> RefineResult:
    """Fit body parameters to observed normals and silhouette by Adam descent.

    Optimizes the soft (differentiable) objective; the returned parameters
    are the best seen, so the final objective never exceeds the initial one.
    A `diverged` flag is set when the objective fails to improve for
    `patience` consecutive steps.
    """
    from .optimizers import AdamState, ParamStore, adam_step

    if obs.silhouette.sum() == 0:
        raise ObservationError("empty silhouette: nothing to refine against")
    if steps < 1:
        raise ValueError("steps must be >= 1")

    factor = max(1, int(math.ceil(max(obs.size) / max_resolution)))
    small = downsample_observations(obs, factor)
    obs_normals = torch.as_tensor(small.normals, dtype=torch.float64)
    normals_valid = torch.as_tensor(small.normals_valid)
    obs_sil = torch.as_tensor(small.silhouette, dtype=torch.float64)

    store = ParamStore(
        {
            "pose": torch.as_tensor(init.pose.copy(), dtype=torch.float64),
            "shape": torch.as_tensor(init.shape.copy(), dtype=torch.float64),
            "translation": torch.as_tensor(init.translation.copy(), dtype=torch.float64),
        }
    )
    if not optimize_shape:
        store.lr_multipliers["shape"] = 0.0
    adam = AdamState.for_store(store, lr=lr)

    def objective() -> torch.Tensor:
        return refinement_objective(
            template,
            store["pose"],
            store["shape"],
            store["translation"],
            obs_normals,
            normals_valid,
            obs_sil,
            cam,
            lambda_normals,
            lambda_silhouette,
        )

    with torch.no_grad():
        initial = float(objective())
    best_val = initial
    best = {name: store[name].detach().clone() for name in store.names()}
    history = [initial]
    bad_streak = 0
    diverged = False

    for _ in range(steps):
        store.zero_grad()
        value = objective()
        value.backward()
        adam_step(adam, store)
        with torch.no_grad():
            current = float(objective())
        history.append(current)
        if current < best_val:
            best_val = current
            best = {name: store[name].detach().clone() for name in store.names()}
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= patience:
                diverged = True
                break

    refined = BodyParams(
        best["pose"].numpy(), best["shape"].numpy(), best["translation"].numpy()
    )
    hard = hard_objective(template, refined, obs, cam, lambda_normals, lambda_silhouette)
    return RefineResult(
        params=refined,
        objective_init=initial,
        objective_final=best_val,
        hard_objective=hard,
        diverged=diverged,
        history=history,
    )


def hard_objective(
    template: SkinnedTemplate,
    params: BodyParams,
    obs: ImageObservations,
    cam: Viewpoint,
    lambda_normals: float = 1.0,
    lambda_silhouette: float = 1.0,
) -> float:
    """Reporting objective on the hard rasterization at native resolution."""
    mesh = pose_mesh(template, params)
    maps = rasterize(mesh, cam, obs.size)
    sil_term = np.abs(obs.silhouette - maps.silhouette).mean()
    if obs.normals_valid.any():
        diff = np.abs(obs.normals - maps.normal).sum(axis=2)
        normal_term = float(diff[obs.normals_valid].mean())
    else:
        normal_term = 0.0
    return float(lambda_normals * normal_term + lambda_silhouette * sil_term)
