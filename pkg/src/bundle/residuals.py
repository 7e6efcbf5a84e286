"""
Residuals of the joint cost: feature reprojection error and the spline pose prior.
"""

from typing import Optional, Tuple

import numpy as np

from src.bundle.problem import ImageRecord, Landmark, Observation
from src.geometry.camera import MIN_DEPTH, CameraIntrinsics, RigExtrinsic, project_points
from src.geometry.se3 import compose_batch, generalized_minus, inverse_batch, se3_log_batch
from src.spline.se3_spline import Se3Spline


def spline_residual(image: ImageRecord, rig: RigExtrinsic, spline: Se3Spline) -> np.ndarray:
    """
    e = T_WC (-) (T_WB(t_i) * T_BC).

    Raises:
        OutOfDomainError: t_i outside the spline domain
    """
    return generalized_minus(image.pose, spline.evaluate(image.stamp_ns).compose(rig.pose))


def reprojection_residual(obs: Observation, image: ImageRecord, landmark: Landmark,
                          intrinsics: CameraIntrinsics) -> Optional[np.ndarray]:
    """
    e = z - project(T_CW * p).

    Returns:
        Pixel residual, or None when the landmark is at or behind the camera
        plane (the caller marks the observation inactive)
    """
    p_cam = image.pose.inverse().act(landmark.position)
    if p_cam[2] <= MIN_DEPTH:
        return None
    return obs.pixel - project_points(intrinsics, p_cam[None])[0]


def camera_points(rot_wc: np.ndarray, t_wc: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Stacked p_c = R_WC^T (p_w - t_WC)."""
    return np.einsum("nji,nj->ni", rot_wc, points - t_wc)


def spline_residuals_batch(prior_r: np.ndarray, prior_t: np.ndarray, rig_r: np.ndarray, rig_t: np.ndarray,
                           rot_wc: np.ndarray, t_wc: np.ndarray) -> np.ndarray:
    """Stacked log((T_WB T_BC)^-1 T_WC) given precomputed T_WB(t_i)."""
    exp_r, exp_t = compose_batch(prior_r, prior_t, rig_r, rig_t)
    inv_r, inv_t = inverse_batch(exp_r, exp_t)
    err_r, err_t = compose_batch(inv_r, inv_t, rot_wc, t_wc)
    return se3_log_batch(err_r, err_t)


def reprojection_errors(observed: np.ndarray, intrinsics: CameraIntrinsics, rot_wc: np.ndarray,
                        t_wc: np.ndarray, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pixel residuals (N, 2) and an in-front mask for stacked observations of one camera.
    Residuals of points behind the camera are set to NaN.
    """
    p_cam = camera_points(rot_wc, t_wc, points)
    front = p_cam[:, 2] > MIN_DEPTH
    residual = np.full((len(p_cam), 2), np.nan)
    if np.any(front):
        residual[front] = observed[front] - project_points(intrinsics, p_cam[front])
    return residual, front
