"""
Image pair selection by pose, and landmark triangulation (linear DLT
followed by per-landmark Gauss-Newton on the reprojection error).
"""

from itertools import combinations
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.bundle.problem import ImageRecord
from src.geometry.camera import MIN_DEPTH, CameraIntrinsics, project_points, projection_jacobians, undistort_normalized

MAX_HYPOTHESES = 64


class View(NamedTuple):
    """One observation of a track together with the observing camera."""

    pixel: np.ndarray
    rotation: np.ndarray  # R_WC
    center: np.ndarray    # t_WC
    intrinsics: CameraIntrinsics


class TriangulationResult(NamedTuple):
    position: Optional[np.ndarray]
    reason: str
    mean_error: float
    inliers: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.position is not None


def select_pairs(images: Sequence[ImageRecord], max_dist: float, max_angle: float) -> List[Tuple[str, str]]:
    """
    Unordered image pairs whose camera centres are within max_dist metres and
    whose optical axes differ by at most max_angle degrees.

    Returns:
        Sorted list of (image id, image id) with the smaller id first
    """
    images = list(images)
    if len(images) < 2:
        return []
    centers = np.stack([im.pose.translation for im in images])
    axes = np.stack([im.pose.rotation[:, 2] for im in images])
    cos_limit = np.cos(np.radians(max_angle))
    out = []
    for i, j in cKDTree(centers).query_pairs(r=max_dist, output_type="ndarray"):
        if np.linalg.norm(centers[i] - centers[j]) > max_dist:
            continue
        if np.dot(axes[i], axes[j]) >= cos_limit - 1e-15:
            a, b = images[i].image_id, images[j].image_id
            out.append((a, b) if a < b else (b, a))
    return sorted(out)


def _reprojection(views: Sequence[View], point: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    errors = np.zeros(len(views))
    depths = np.zeros(len(views))
    for k, view in enumerate(views):
        p_cam = view.rotation.T @ (point - view.center)
        depths[k] = p_cam[2]
        if p_cam[2] <= MIN_DEPTH:
            errors[k] = np.inf
            continue
        errors[k] = np.linalg.norm(view.pixel - project_points(view.intrinsics, p_cam[None])[0])
    return errors, depths


def _dlt(views: Sequence[View]) -> Optional[np.ndarray]:
    rows = []
    for view in views:
        x, y = undistort_normalized(view.intrinsics, view.pixel[None])[0]
        proj = np.hstack([view.rotation.T, (-view.rotation.T @ view.center)[:, None]])
        rows.append(x * proj[2] - proj[0])
        rows.append(y * proj[2] - proj[1])
    a = np.array(rows)
    scale = np.linalg.norm(a, axis=1, keepdims=True)
    a = a / np.where(scale > 0, scale, 1.0)
    _, s, vt = np.linalg.svd(a)
    if s[-2] <= 1e-12 * s[0]:
        return None
    h = vt[-1]
    if abs(h[3]) <= 1e-12 * np.linalg.norm(h[:3]):
        return None
    return h[:3] / h[3]


def _refine(views: Sequence[View], point: np.ndarray, iterations: int = 10) -> np.ndarray:
    for _ in range(iterations):
        jac, res = [], []
        for view in views:
            p_cam = view.rotation.T @ (point - view.center)
            if p_cam[2] <= MIN_DEPTH:
                return point
            j_point, _ = projection_jacobians(view.intrinsics, p_cam[None])
            jac.append(j_point[0] @ view.rotation.T)
            res.append(view.pixel - project_points(view.intrinsics, p_cam[None])[0])
        jac = np.vstack(jac)
        res = np.concatenate(res)
        step, *_ = np.linalg.lstsq(jac, res, rcond=None)
        point = point + step
        if np.linalg.norm(step) <= 1e-14 * max(1.0, np.linalg.norm(point)):
            break
    return point


def _max_angle(views: Sequence[View], point: np.ndarray) -> float:
    rays = np.stack([point - v.center for v in views])
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    cos = np.clip(rays @ rays.T, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos.min())))


def triangulate(views: Sequence[View], min_angle: float, max_reproj: float) -> TriangulationResult:
    """
    Triangulate one track.

    Args:
        views: At least two observations with their camera poses and intrinsics
        min_angle: Minimum triangulation angle (deg)
        max_reproj: Maximum mean reprojection error (px)

    Returns:
        TriangulationResult; position is None with a reason when the track is rejected
    """
    if len(views) < 2:
        return TriangulationResult(None, "too few observations", np.inf)
    point = _dlt(views)
    if point is None:
        return TriangulationResult(None, "degenerate", np.inf)
    if _max_angle(views, point) < min_angle:
        return TriangulationResult(None, "small triangulation angle", np.inf)
    _, depths = _reprojection(views, point)
    if np.any(depths <= MIN_DEPTH):
        return TriangulationResult(None, "behind camera", np.inf)
    point = _refine(views, point)
    errors, depths = _reprojection(views, point)
    if np.any(depths <= MIN_DEPTH):
        return TriangulationResult(None, "behind camera", np.inf)
    if _max_angle(views, point) < min_angle:
        return TriangulationResult(None, "small triangulation angle", np.inf)
    mean = float(errors.mean())
    if mean > max_reproj:
        return TriangulationResult(None, "large reprojection error", mean)
    return TriangulationResult(point, "ok", mean, np.ones(len(views), dtype=bool))


def triangulate_robust(
    views: Sequence[View],
    image_ids: Sequence[str],
    min_angle: float,
    max_reproj: float,
    allowed_pairs: Optional[Set[Tuple[str, str]]] = None,
) -> TriangulationResult:
    """
    Consensus triangulation: every allowed pair of views proposes a point,
    the point with the most views under max_reproj wins and is re-triangulated from them.

    Args:
        views: Observations of the track
        image_ids: Image id of each view, used to look up allowed pairs
        min_angle: Minimum triangulation angle (deg)
        max_reproj: Inlier threshold and maximum mean error (px)
        allowed_pairs: Image pairs permitted to seed a hypothesis; None allows all

    Returns:
        TriangulationResult with the inlier mask over views
    """
    if len(views) < 2:
        return TriangulationResult(None, "too few observations", np.inf)
    best = None
    tried = 0
    for i, j in combinations(range(len(views)), 2):
        if allowed_pairs is not None:
            key = (image_ids[i], image_ids[j]) if image_ids[i] < image_ids[j] else (image_ids[j], image_ids[i])
            if key not in allowed_pairs:
                continue
        if tried >= MAX_HYPOTHESES:
            break
        tried += 1
        seed = triangulate([views[i], views[j]], min_angle, max_reproj)
        if not seed.ok:
            continue
        errors, _ = _reprojection(views, seed.position)
        inliers = errors <= max_reproj
        score = (int(inliers.sum()), -float(np.mean(errors[inliers])))
        if best is None or score > best[0]:
            best = (score, inliers)
    if best is None:
        return TriangulationResult(None, "no valid pair", np.inf)
    inliers = best[1]
    if inliers.sum() < 2:
        return TriangulationResult(None, "too few inliers", np.inf)
    chosen = [v for v, keep in zip(views, inliers) if keep]
    result = triangulate(chosen, min_angle, max_reproj)
    if not result.ok:
        return result
    errors, _ = _reprojection(views, result.position)
    return TriangulationResult(result.position, "ok", result.mean_error, errors <= max_reproj)


def views_for(pixels: np.ndarray, images: Sequence[ImageRecord],
              intrinsics: Dict[str, CameraIntrinsics]) -> List[View]:
    return [View(np.asarray(px, dtype=float), im.pose.rotation, im.pose.translation, intrinsics[im.camera_id])
            for px, im in zip(pixels, images)]
