"""Perspective cameras on a sphere around the subject.

Azimuth 0 places the camera on +Z looking at `look_at`; positive elevation
moves it up (+Y). Depth everywhere in the engine is Euclidean distance along
the unit pixel ray, not z-distance, so rasterized and volume-rendered depth
maps are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class DegenerateCameraError(ValueError):
    """Camera parameters outside the valid domain (radius, FOV)."""


@dataclass(frozen=True)
class Viewpoint:
    azimuth_deg: float
    elevation_deg: float
    radius: float = 2.5
    fov_deg: float = 20.0
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise DegenerateCameraError(f"fov {self.fov_deg} outside (0, 180)")
        if self.radius <= 0.0:
            raise DegenerateCameraError(f"radius {self.radius} must be positive")

    def with_azimuth(self, azimuth_deg: float) -> "Viewpoint":
        return replace(self, azimuth_deg=azimuth_deg)

    @property
    def position(self) -> np.ndarray:
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        offset = np.array(
            [
                math.cos(el) * math.sin(az),
                math.sin(el),
                math.cos(el) * math.cos(az),
            ]
        )
        return np.asarray(self.look_at, dtype=np.float64) + self.radius * offset

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward) in world space."""
        pos = self.position
        forward = np.asarray(self.look_at, dtype=np.float64) - pos
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise DegenerateCameraError("view direction parallel to up vector")
        right /= nr
        cam_up = np.cross(right, forward)
        return right, cam_up, forward

    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """Rotation R and origin o with p_cam = R @ (p_world − o).

        Camera space: +x right, +y up, −z forward (view direction).
        """
        right, cam_up, forward = self.basis()
        rot = np.stack([right, cam_up, -forward], axis=0)
        return rot, self.position

    def pixel_rays(self, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        """Unit rays through pixel centers: origins H×W×3, directions H×W×3."""
        if height < 1 or width < 1:
            raise DegenerateCameraError(f"render size {height}×{width} invalid")
        right, cam_up, forward = self.basis()
        half = math.tan(math.radians(self.fov_deg) / 2.0)
        aspect = width / height
        xs = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * half * aspect
        ys = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) * half
        dirs = (
            xs[None, :, None] * right[None, None, :]
            + ys[:, None, None] * cam_up[None, None, :]
            + forward[None, None, :]
        )
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        origins = np.broadcast_to(self.position, dirs.shape).copy()
        return origins, dirs


def turntable_viewpoints(reference: Viewpoint, count: int = 8) -> list[Viewpoint]:
    """Viewpoints at evenly spaced azimuth offsets from the reference view."""
    step = 360.0 / count
    return [reference.with_azimuth(reference.azimuth_deg + k * step) for k in range(count)]
