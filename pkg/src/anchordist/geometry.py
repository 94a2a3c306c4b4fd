"""Pinhole camera math.

Camera frame follows the KITTI convention: x right, y down, z forward.
A 3D location is recovered from a pixel by casting a unit ray through it
and scaling by the estimated distance from the camera origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")


@dataclass(frozen=True)
class Ray:
    """Unit direction vector in the camera frame, +z forward."""

    direction: tuple[float, float, float]

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.direction))
        if abs(n - 1.0) > 1e-9:
            raise DomainError(f"ray direction must be unit length, |d| = {n}")


def pixel_to_ray(intr: CameraIntrinsics, u: float, v: float) -> Ray:
    """Unit ray from the camera origin through pixel (u, v)."""
    x = (u - intr.cx) / intr.fx
    y = (v - intr.cy) / intr.fy
    n = math.sqrt(x * x + y * y + 1.0)
    return Ray((x / n, y / n, 1.0 / n))


def locate_object(ray: Ray, distance: float) -> tuple[float, float, float]:
    """3D location at `distance` meters from the origin along `ray`."""
    if distance <= 0:
        raise DomainError(f"distance must be positive, got {distance}")
    dx, dy, dz = ray.direction
    return (dx * distance, dy * distance, dz * distance)


def distance_of(location) -> float:
    """Euclidean distance of a 3D location from the camera origin."""
    x, y, z = location
    return math.sqrt(x * x + y * y + z * z)


def depth_of(location) -> float:
    """Depth (z component) of a 3D location."""
    return float(location[2])


def project_to_image(intr: CameraIntrinsics, location) -> tuple[float, float]:
    """Project a 3D location with z > 0 to pixel coordinates."""
    x, y, z = location
    if z <= 0:
        raise DomainError(f"cannot project point with z = {z}")
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def to_bev(location) -> tuple[float, float]:
    """Bird-eye-view coordinates: drop the vertical axis, keep (x, z)."""
    x, _, z = location
    return (float(x), float(z))


def locations_from_pixels(intr: CameraIntrinsics, uv: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Vectorized ray-times-distance back-projection.

    uv: (n, 2) pixel coordinates; distances: (n,) meters.  Returns (n, 3).
    """
    uv = np.asarray(uv, dtype=float)
    d = np.asarray(distances, dtype=float)
    dirs = np.stack(
        [(uv[:, 0] - intr.cx) / intr.fx, (uv[:, 1] - intr.cy) / intr.fy, np.ones(len(uv))],
        axis=1,
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * d[:, None]
