"""
Absolute camera pose from 2D-3D matches: minimal P3P hypotheses inside
RANSAC, followed by Gauss-Newton refinement of the reprojection error on the
consensus set.
"""

from typing import List, NamedTuple, Optional

import numpy as np
from numpy.polynomial import polynomial as P

from src.errors import DegenerateGeometryError, InsufficientMatchesError
from src.geometry.camera import MIN_DEPTH, CameraIntrinsics, bearing_vectors, project_points, projection_jacobians
from src.geometry.se3 import Se3Pose, hat, se3_exp
from src.logger import Logger
from src.pointcloud.icp import kabsch
from src.validator import RansacConfig

MIN_MATCHES = 4
REFINE_ITERATIONS = 20


class LocalizationResult(NamedTuple):
    pose: Optional[Se3Pose]   # T_WC
    inliers: np.ndarray
    localized: bool
    mean_error: float

    @property
    def num_inliers(self) -> int:
        return int(self.inliers.sum())


def p3p(bearings: np.ndarray, points: np.ndarray) -> List[Se3Pose]:
    """
    Camera poses T_CW consistent with three bearing/world-point pairs.

    Solves the distance equations for the depth ratios u = s2/s1, v = s3/s1:
    eliminating u between the two quadratics leaves a quartic in v.

    Args:
        bearings: Unit viewing rays (3, 3) in the camera frame
        points: World points (3, 3)

    Returns:
        Up to four candidate poses
    """
    f1, f2, f3 = bearings
    p1, p2, p3_ = points
    a2 = float(np.sum((p2 - p3_) ** 2))
    b2 = float(np.sum((p1 - p3_) ** 2))
    c2 = float(np.sum((p1 - p2) ** 2))
    if min(a2, b2, c2) <= 1e-18 or np.linalg.norm(np.cross(p2 - p1, p3_ - p1)) <= 1e-12 * c2:
        return []
    ca, cb, cg = float(f2 @ f3), float(f1 @ f3), float(f1 @ f2)

    # coefficients as polynomials in v (increasing order)
    A2 = np.array([b2])
    A1 = np.array([-2.0 * b2 * cg])
    A0 = np.array([b2 - c2, 2.0 * c2 * cb, -c2])
    B2 = np.array([a2 - c2])
    B1 = np.array([-2.0 * a2 * cg, 2.0 * c2 * ca])
    B0 = np.array([a2, 0.0, -c2])

    d20 = P.polysub(P.polymul(A2, B0), P.polymul(A0, B2))
    d21 = P.polysub(P.polymul(A2, B1), P.polymul(A1, B2))
    d10 = P.polysub(P.polymul(A1, B0), P.polymul(A0, B1))
    quartic = P.polysub(P.polymul(d20, d20), P.polymul(d21, d10))
    quartic = np.trim_zeros(quartic, "b")
    if len(quartic) < 2:
        return []

    poses = []
    for root in P.polyroots(quartic):
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        if v <= 0:
            continue
        denom = float(P.polyval(v, d21)) * -1.0
        if abs(denom) <= 1e-15:
            continue
        u = float(P.polyval(v, d20)) / denom
        if u <= 0:
            continue
        q = 1.0 + u * u - 2.0 * u * cg
        if q <= 0:
            continue
        s1 = np.sqrt(c2 / q)
        cam = np.stack([s1 * f1, u * s1 * f2, v * s1 * f3])
        try:
            poses.append(kabsch(points, cam))
        except DegenerateGeometryError:
            continue
    return poses


def _errors(pose_cw: Se3Pose, pixels: np.ndarray, points: np.ndarray,
            intrinsics: CameraIntrinsics) -> np.ndarray:
    p_cam = pose_cw.act(points)
    errors = np.full(len(points), np.inf)
    front = p_cam[:, 2] > MIN_DEPTH
    if np.any(front):
        errors[front] = np.linalg.norm(pixels[front] - project_points(intrinsics, p_cam[front]), axis=1)
    return errors


def refine_pose(pose_cw: Se3Pose, pixels: np.ndarray, points: np.ndarray,
                intrinsics: CameraIntrinsics, iterations: int = REFINE_ITERATIONS) -> Se3Pose:
    """Gauss-Newton on the reprojection error with left perturbations of T_CW."""
    for _ in range(iterations):
        p_cam = pose_cw.act(points)
        if np.any(p_cam[:, 2] <= MIN_DEPTH):
            break
        residual = pixels - project_points(intrinsics, p_cam)
        j_point, _ = projection_jacobians(intrinsics, p_cam)
        d_cam = np.concatenate([-hat(p_cam), np.broadcast_to(np.eye(3), (len(p_cam), 3, 3))], axis=2)
        jac = (j_point @ d_cam).reshape(-1, 6)
        step, *_ = np.linalg.lstsq(jac, residual.reshape(-1), rcond=None)
        pose_cw = se3_exp(step).compose(pose_cw)
        if np.linalg.norm(step) <= 1e-15:
            break
    return pose_cw


def pnp_ransac(pixels: np.ndarray, points: np.ndarray, intrinsics: CameraIntrinsics,
               cfg: Optional[RansacConfig] = None, logger: Optional[Logger] = None) -> LocalizationResult:
    """
    Localize one camera from 2D-3D matches.

    Args:
        pixels: Observed pixels (N, 2)
        points: Matched world points (N, 3)
        intrinsics: Camera intrinsics
        cfg: RANSAC settings; the seed makes the result reproducible
        logger: Optional logger

    Returns:
        LocalizationResult with the camera pose T_WC; localized is False when the
        best consensus has fewer than cfg.min_inliers matches

    Raises:
        InsufficientMatchesError: fewer than four matches
    """
    cfg = cfg or RansacConfig()
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pixels)
    if n < MIN_MATCHES or len(points) != n:
        raise InsufficientMatchesError(f"pose estimation needs at least {MIN_MATCHES} matches, got {n}")

    rays = bearing_vectors(intrinsics, pixels)
    rng = np.random.default_rng(cfg.seed)
    best_pose, best_inliers, best_score = None, np.zeros(n, dtype=bool), (0, -np.inf)
    for _ in range(cfg.iterations):
        sample = rng.choice(n, 3, replace=False)
        for pose in p3p(rays[sample], points[sample]):
            errors = _errors(pose, pixels, points, intrinsics)
            inliers = errors <= cfg.inlier_px
            count = int(inliers.sum())
            if count == 0:
                continue
            score = (count, -float(errors[inliers].mean()))
            if score > best_score:
                best_pose, best_inliers, best_score = pose, inliers, score
        if best_score[0] == n:
            break

    if best_pose is None or best_score[0] < max(cfg.min_inliers, MIN_MATCHES):
        if logger is not None:
            logger.add_log(f"pnp: not localized ({best_score[0]} inlier(s) of {n})")
        return LocalizationResult(None, best_inliers, False, float("inf"))

    pose = best_pose
    inliers = best_inliers
    for _ in range(2):
        pose = refine_pose(pose, pixels[inliers], points[inliers], intrinsics)
        errors = _errors(pose, pixels, points, intrinsics)
        updated = errors <= cfg.inlier_px
        if updated.sum() < max(cfg.min_inliers, MIN_MATCHES):
            break
        inliers = updated
    errors = _errors(pose, pixels, points, intrinsics)
    localized = int(inliers.sum()) >= cfg.min_inliers
    if logger is not None:
        logger.add_log(f"pnp: {int(inliers.sum())}/{n} inliers, mean error {errors[inliers].mean():.4f} px")
    return LocalizationResult(pose.inverse(), inliers, localized, float(errors[inliers].mean()))
