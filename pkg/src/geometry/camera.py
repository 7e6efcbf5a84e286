"""
Pinhole camera with two-term radial (Brown-Conrady) distortion and the rig
extrinsic type. Camera frame: z forward, x right, y down.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import BehindCameraError
from src.geometry.se3 import Se3Pose

MIN_DEPTH = 1e-9
INTRINSIC_NAMES = ("fx", "fy", "cx", "cy", "k1", "k2")


class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0, description="Focal length x (px)")
    fy: float = Field(..., gt=0, description="Focal length y (px)")
    cx: float = Field(..., ge=0, description="Principal point x (px)")
    cy: float = Field(..., ge=0, description="Principal point y (px)")
    k1: float = Field(0.0, description="First radial distortion coefficient")
    k2: float = Field(0.0, description="Second radial distortion coefficient")
    width: int = Field(..., gt=0, description="Image width (px)")
    height: int = Field(..., gt=0, description="Image height (px)")

    @model_validator(mode="after")
    def check_principal_point(self) -> "CameraIntrinsics":
        if self.cx >= self.width or self.cy >= self.height:
            raise ValueError("principal point must lie inside the image")
        return self

    def params(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.k1, self.k2])

    def with_params(self, params: np.ndarray) -> "CameraIntrinsics":
        values = {name: float(v) for name, v in zip(INTRINSIC_NAMES, params)}
        return CameraIntrinsics(width=self.width, height=self.height, **values)

    def in_bounds(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return ((pixels[:, 0] >= 0) & (pixels[:, 0] < self.width)
                & (pixels[:, 1] >= 0) & (pixels[:, 1] < self.height))


@dataclass(frozen=True)
class RigExtrinsic:
    """Camera pose in the platform frame (T_BC). The translation stays fixed under calibration."""

    camera_id: str
    pose: Se3Pose
    translation_fixed: bool = field(default=True)

    def with_rotation(self, rotation: np.ndarray) -> "RigExtrinsic":
        # reuse the stored translation array so it stays bit-identical
        return RigExtrinsic(self.camera_id, Se3Pose.from_rt(rotation, self.pose.translation),
                            self.translation_fixed)


def _distortion(intrinsics: CameraIntrinsics, r2: np.ndarray) -> np.ndarray:
    return 1.0 + intrinsics.k1 * r2 + intrinsics.k2 * r2 * r2


def project_with_params(params: np.ndarray, p_cam: np.ndarray) -> np.ndarray:
    """
    Projection with intrinsics given as (fx, fy, cx, cy, k1, k2) rows.

    Args:
        params: Shape (6,) or one row per point (N, 6)
        p_cam: Camera-frame points (N, 3) in front of the camera

    Returns:
        Pixels (N, 2)
    """
    p_cam = np.asarray(p_cam, dtype=float).reshape(-1, 3)
    params = np.broadcast_to(np.asarray(params, dtype=float), (len(p_cam), 6))
    fx, fy, cx, cy, k1, k2 = params.T
    x = p_cam[:, 0] / p_cam[:, 2]
    y = p_cam[:, 1] / p_cam[:, 2]
    r2 = x * x + y * y
    d = 1.0 + k1 * r2 + k2 * r2 * r2
    return np.stack([fx * x * d + cx, fy * y * d + cy], axis=1)


def project_points(intrinsics: CameraIntrinsics, p_cam: np.ndarray, check: bool = True) -> np.ndarray:
    """
    Project camera-frame points (N, 3) to pixels (N, 2).

    Args:
        intrinsics: Camera intrinsics
        p_cam: Points in the camera frame
        check: Raise on points at or behind the camera plane

    Returns:
        Pixel coordinates
    """
    p_cam = np.asarray(p_cam, dtype=float).reshape(-1, 3)
    z = p_cam[:, 2]
    if check and np.any(z <= MIN_DEPTH):
        raise BehindCameraError(f"{int(np.sum(z <= MIN_DEPTH))} point(s) at or behind the camera plane")
    p_cam = np.column_stack([p_cam[:, :2], np.where(z <= MIN_DEPTH, MIN_DEPTH, z)])
    return project_with_params(intrinsics.params(), p_cam)


def project(intrinsics: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    """
    Project a single camera-frame point.

    Raises:
        BehindCameraError: p_cam.z <= 1e-9
    """
    return project_points(intrinsics, np.asarray(p_cam, dtype=float).reshape(1, 3))[0]


def projection_jacobians(intrinsics: CameraIntrinsics, p_cam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic Jacobians of project_points.

    Returns:
        Tuple of d(pixel)/d(p_cam) with shape (N, 2, 3) and
        d(pixel)/d(fx, fy, cx, cy, k1, k2) with shape (N, 2, 6)
    """
    return projection_jacobians_params(intrinsics.params(), p_cam)


def projection_jacobians_params(params: np.ndarray, p_cam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """projection_jacobians with intrinsics given as (6,) or (N, 6) parameter rows."""
    p_cam = np.asarray(p_cam, dtype=float).reshape(-1, 3)
    params = np.broadcast_to(np.asarray(params, dtype=float), (len(p_cam), 6))
    fx, fy, _, _, k1, k2 = params.T
    z = p_cam[:, 2]
    x = p_cam[:, 0] / z
    y = p_cam[:, 1] / z
    r2 = x * x + y * y
    d = 1.0 + k1 * r2 + k2 * r2 * r2
    dd = k1 + 2.0 * k2 * r2  # d(d)/d(r2)

    n = len(p_cam)
    j_norm = np.zeros((n, 2, 2))
    j_norm[:, 0, 0] = fx * (d + 2.0 * x * x * dd)
    j_norm[:, 0, 1] = fx * 2.0 * x * y * dd
    j_norm[:, 1, 0] = fy * 2.0 * x * y * dd
    j_norm[:, 1, 1] = fy * (d + 2.0 * y * y * dd)

    j_div = np.zeros((n, 2, 3))
    j_div[:, 0, 0] = 1.0 / z
    j_div[:, 0, 2] = -x / z
    j_div[:, 1, 1] = 1.0 / z
    j_div[:, 1, 2] = -y / z
    j_point = j_norm @ j_div

    j_intr = np.zeros((n, 2, 6))
    j_intr[:, 0, 0] = x * d
    j_intr[:, 1, 1] = y * d
    j_intr[:, 0, 2] = 1.0
    j_intr[:, 1, 3] = 1.0
    j_intr[:, 0, 4] = fx * x * r2
    j_intr[:, 1, 4] = fy * y * r2
    j_intr[:, 0, 5] = fx * x * r2 * r2
    j_intr[:, 1, 5] = fy * y * r2 * r2
    return j_point, j_intr


def undistort_normalized(intrinsics: CameraIntrinsics, pixels: np.ndarray,
                         iterations: int = 50, tol: float = 1e-15) -> np.ndarray:
    """Normalized undistorted image coordinates (N, 2) of pixels, by fixed-point iteration."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    distorted = np.stack([(pixels[:, 0] - intrinsics.cx) / intrinsics.fx,
                          (pixels[:, 1] - intrinsics.cy) / intrinsics.fy], axis=1)
    if intrinsics.k1 == 0.0 and intrinsics.k2 == 0.0:
        return distorted
    xy = distorted.copy()
    for _ in range(iterations):
        d = _distortion(intrinsics, np.sum(xy * xy, axis=1))
        updated = distorted / d[:, None]
        step = np.max(np.abs(updated - xy)) if len(xy) else 0.0
        xy = updated
        if step < tol:
            break
    return xy


def unproject(intrinsics: CameraIntrinsics, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Camera-frame point at the given depth (z) whose projection is the pixel."""
    xy = undistort_normalized(intrinsics, np.asarray(pixel, dtype=float).reshape(1, 2))[0]
    return depth * np.array([xy[0], xy[1], 1.0])


def bearing_vectors(intrinsics: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Unit viewing rays (N, 3) in the camera frame."""
    xy = undistort_normalized(intrinsics, pixels)
    rays = np.concatenate([xy, np.ones((len(xy), 1))], axis=1)
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)
