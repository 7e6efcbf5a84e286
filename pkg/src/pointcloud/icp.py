"""
Iterative closest point alignment with a k-d tree on the target cloud.

Two objectives share one loop: point-to-point with the closed-form SVD
update, and point-to-plane where residuals are projected onto the normal
space of the matched target neighbourhood. Optional trimming drops the
largest residuals every iteration, so points matched across a corner or
seen by only one of the two scans do not bias the estimate.
"""

from typing import List, NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from src.errors import DegenerateGeometryError, NoOverlapError
from src.geometry.se3 import Se3Pose, hat, se3_exp, se3_log_batch
from src.logger import Logger
from src.pointcloud.cloud import PointCloud, voxel_downsample
from src.validator import IcpConfig


class IcpResult(NamedTuple):
    pose: Se3Pose
    fitness: float
    rmse: float
    iterations: int
    history: List[float]


def kabsch(source: np.ndarray, target: np.ndarray) -> Se3Pose:
    """
    Rigid transform minimizing sum |R s + t - q|^2 (scale fixed at 1).

    A rank-2 (planar) source is accepted: a single-ring scan still fixes the
    motion within its plane, so only collinear or single points are rejected.

    Raises:
        DegenerateGeometryError: centered source spans fewer than two directions
    """
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    src = source - mu_s
    tgt = target - mu_t
    scale = max(np.abs(src).max(), np.abs(tgt).max(), 1e-300)
    spread = np.linalg.svd(src / scale, compute_uv=False)
    if len(source) < 3 or spread[1] <= 1e-9 * max(spread[0], 1e-300):
        raise DegenerateGeometryError(f"point set of {len(source)} point(s) is collinear or degenerate")
    u, _, vt = np.linalg.svd(tgt.T @ src)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ vt
    return Se3Pose.from_rt(rot, mu_t - rot @ mu_s)


def normal_projectors(points: np.ndarray, tree: cKDTree, neighbors: int, ratio: float) -> np.ndarray:
    """Per-point projector (N, 3, 3) onto the local normal space estimated by PCA."""
    k = min(neighbors, len(points))
    _, idx = tree.query(points, k=k)
    idx = idx.reshape(len(points), k)
    local = points[idx] - points[idx].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / k
    values, vectors = np.linalg.eigh(cov)
    normal = values < ratio * values[:, 2:3]
    basis = vectors * normal[:, None, :]
    return np.einsum("nik,njk->nij", basis, basis)


def _associate(tree: cKDTree, moved: np.ndarray, max_corr: float):
    dist, idx = tree.query(moved, distance_upper_bound=max_corr)
    mask = np.isfinite(dist) & (dist <= max_corr)
    return dist, idx, mask


def _residuals(moved: np.ndarray, tgt: np.ndarray, idx: np.ndarray, matched: np.ndarray,
               projectors: Optional[np.ndarray], trim: float):
    """
    Residual vectors of the matched points, without the trim fraction of largest norm.

    Returns:
        Tuple of kept source indices and their residuals (K, 3)
    """
    offset = moved[matched] - tgt[idx[matched]]
    if projectors is not None:
        offset = np.einsum("nij,nj->ni", projectors[idx[matched]], offset)
    if trim <= 0.0:
        return matched, offset
    keep = max(int(np.ceil((1.0 - trim) * len(matched))), min(len(matched), 3))
    order = np.sort(np.argsort(np.sum(offset * offset, axis=1), kind="stable")[:keep])
    return matched[order], offset[order]


def icp_align(
    source: PointCloud,
    target: PointCloud,
    init: Se3Pose,
    cfg: IcpConfig,
    logger: Optional[Logger] = None,
) -> IcpResult:
    """
    Align source to target, returning T such that T * source matches target.

    Args:
        source: Cloud to move
        target: Reference cloud
        init: Initial guess of T
        cfg: ICP configuration
        logger: Optional logger

    Returns:
        IcpResult with the pose, the inlier fraction of the source under
        cfg.max_corr_dist, the residual RMS over the inliers kept after cfg.trim
        and the per-iteration RMS history

    Raises:
        NoOverlapError: no correspondence under max_corr_dist at the initial guess
        DegenerateGeometryError: correspondences do not determine a rigid transform
    """
    if len(source) == 0 or len(target) == 0:
        raise NoOverlapError("ICP needs two non-empty clouds")
    if cfg.voxel is not None:
        source = voxel_downsample(source, cfg.voxel)
        target = voxel_downsample(target, cfg.voxel)
    src = source.points
    tgt = target.points
    tree = cKDTree(tgt)
    projectors = None
    if cfg.method == "point_to_plane":
        projectors = normal_projectors(tgt, tree, cfg.normal_neighbors, cfg.normal_ratio)

    pose = init
    _, _, mask = _associate(tree, pose.act(src), cfg.max_corr_dist)
    if not np.any(mask):
        raise NoOverlapError(f"no correspondence under {cfg.max_corr_dist} m at the initial guess")

    history: List[float] = []
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        moved = pose.act(src)
        _, idx, mask = _associate(tree, moved, cfg.max_corr_dist)
        if not np.any(mask):
            raise NoOverlapError("ICP lost all correspondences")
        kept, residual = _residuals(moved, tgt, idx, np.flatnonzero(mask), projectors, cfg.trim)
        history.append(float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1)))))
        # point-to-plane shares the degeneracy contract of point-to-point
        update = kabsch(moved[kept], tgt[idx[kept]])
        if projectors is not None:
            proj = projectors[idx[kept]]
            jac = np.concatenate([-proj @ hat(moved[kept]), proj], axis=2).reshape(-1, 6)
            delta, *_ = np.linalg.lstsq(jac, -residual.reshape(-1), rcond=1e-12)
            update = se3_exp(delta)
        pose = update.compose(pose)
        step = float(np.linalg.norm(se3_log_batch(update.rotation[None], update.translation[None])))
        if logger is not None:
            logger.add_log(f"icp iter {iterations}: rmse {history[-1]:.6e} inliers {int(mask.sum())} step {step:.3e}")
        if step < cfg.tol:
            break

    moved = pose.act(src)
    _, idx, mask = _associate(tree, moved, cfg.max_corr_dist)
    fitness = float(np.mean(mask))
    rmse = float("inf")
    if np.any(mask):
        _, residual = _residuals(moved, tgt, idx, np.flatnonzero(mask), projectors, cfg.trim)
        rmse = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    return IcpResult(pose, fitness, rmse, iterations, history)
