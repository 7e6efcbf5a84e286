"""
Point-cloud containers, wheel-odometry tracks and scan motion compensation.
"""

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from src.errors import CoverageError, DataError, NonMonotonicTimestampsError
from src.geometry.se3 import (
    Se3Pose, arrays_to_poses, compose_batch, inverse_batch, poses_to_arrays,
    se3_exp_batch, se3_log_batch,
)

SCAN_PERIOD = 0.1


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "base"

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise DataError(f"point cloud in frame '{self.frame}' has non-finite coordinates")
        object.__setattr__(self, "points", _frozen(points))

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: Se3Pose, frame: str) -> "PointCloud":
        return PointCloud(pose.act(self.points), frame)


@dataclass(frozen=True)
class LidarScan:
    """One LiDAR revolution: sensor-frame points with per-point time offsets (s) from the scan start."""

    points: np.ndarray
    offsets: np.ndarray
    stamp_ns: int
    lidar_id: str = "lidar0"
    period: float = field(default=SCAN_PERIOD)

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1, 3)
        offsets = np.array(self.offsets, dtype=float).reshape(-1)
        if len(points) != len(offsets):
            raise DataError(f"scan {self.lidar_id}@{self.stamp_ns}: {len(points)} points but {len(offsets)} time offsets")
        if not np.all(np.isfinite(points)):
            raise DataError(f"scan {self.lidar_id}@{self.stamp_ns} has non-finite coordinates")
        if np.any(offsets < 0) or np.any(offsets >= self.period):
            raise DataError(f"scan {self.lidar_id}@{self.stamp_ns}: time offsets must lie in [0, {self.period})")
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "offsets", _frozen(offsets))
        object.__setattr__(self, "stamp_ns", int(self.stamp_ns))

    def __len__(self) -> int:
        return len(self.points)


class OdometryTrack:
    """Relative platform motion from wheel encoders; the first sample is the identity."""

    def __init__(self, times: Sequence[int], poses: Sequence[Se3Pose], check_identity: bool = True):
        times = np.asarray(times, dtype=np.int64).reshape(-1)
        if len(times) != len(poses):
            raise DataError(f"odometry track has {len(times)} timestamps but {len(poses)} poses")
        if len(times) == 0:
            raise DataError("odometry track is empty")
        if np.any(np.diff(times) <= 0):
            raise NonMonotonicTimestampsError("odometry timestamps must be strictly increasing")
        if check_identity:
            first = poses[0]
            if first.angle() > 1e-12 or np.linalg.norm(first.translation) > 1e-12:
                raise DataError("the first odometry sample must be the identity")
        self.times = _frozen(times)
        self.poses = list(poses)
        rot, trans = poses_to_arrays(self.poses)
        self._rot = _frozen(rot)
        self._trans = _frozen(trans)
        inv_r, inv_t = inverse_batch(rot[:-1], trans[:-1])
        rel_r, rel_t = compose_batch(inv_r, inv_t, rot[1:], trans[1:])
        self._steps = _frozen(se3_log_batch(rel_r, rel_t)) if len(times) > 1 else np.zeros((0, 6))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def span(self) -> Tuple[int, int]:
        return int(self.times[0]), int(self.times[-1])

    def covers(self, start: float, end: float) -> bool:
        return self.times[0] <= start and end <= self.times[-1]

    def pose_at_batch(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Log-linear interpolation at (possibly fractional) nanosecond timestamps."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if len(t) and (t.min() < self.times[0] or t.max() > self.times[-1]):
            raise CoverageError(f"odometry covers [{self.times[0]}, {self.times[-1]}] ns, "
                                f"requested [{t.min():.0f}, {t.max():.0f}] ns")
        if len(self.times) == 1:
            return np.repeat(self._rot, len(t), axis=0), np.repeat(self._trans, len(t), axis=0)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        alpha = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        step_r, step_t = se3_exp_batch(alpha[:, None] * self._steps[k])
        return compose_batch(self._rot[k], self._trans[k], step_r, step_t)

    def pose_at(self, t: float) -> Se3Pose:
        rot, trans = self.pose_at_batch([t])
        return Se3Pose.from_rt(rot[0], trans[0])

    def relative(self, t_a: float, t_b: float) -> Se3Pose:
        """Motion from the platform frame at t_a to the platform frame at t_b."""
        return self.pose_at(t_a).inverse().compose(self.pose_at(t_b))


def undistort_scan(scan: LidarScan, extrinsic: Se3Pose, odom: OdometryTrack) -> PointCloud:
    """
    Motion-compensate a scan into the platform frame at the scan start.

    Each point is mapped by p_B = R_rel (R_BL p_L + t_BL) + t_rel, where
    (R_rel, t_rel) is the odometry motion from the scan start to the point's
    capture time, interpolated log-linearly.

    Args:
        scan: LiDAR scan with per-point time offsets
        extrinsic: LiDAR pose in the platform frame (T_BL)
        odom: Odometry track covering the scan

    Returns:
        PointCloud in frame "base"

    Raises:
        CoverageError: odometry does not cover the scan duration
    """
    if len(scan) == 0:
        return PointCloud(np.zeros((0, 3)), "base")
    start = float(scan.stamp_ns)
    end = start + float(scan.offsets.max()) * 1e9
    if not odom.covers(start, end):
        raise CoverageError(f"odometry [{odom.times[0]}, {odom.times[-1]}] ns does not cover scan "
                            f"{scan.lidar_id}@{scan.stamp_ns} up to {end:.0f} ns")
    base_r, base_t = odom.pose_at_batch([start])
    inv_r, inv_t = inverse_batch(base_r, base_t)
    at_r, at_t = odom.pose_at_batch(start + scan.offsets * 1e9)
    rel_r, rel_t = compose_batch(inv_r, inv_t, at_r, at_t)
    in_base = extrinsic.act(scan.points)
    return PointCloud(np.einsum("nij,nj->ni", rel_r, in_base) + rel_t, "base")


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    One centroid per occupied voxel, ordered by voxel index.

    Args:
        cloud: Input cloud
        voxel: Voxel edge length (m), > 0

    Returns:
        Downsampled cloud in the same frame
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    return PointCloud(sums / counts[:, None], cloud.frame)


def merge_clouds(clouds: Iterable[PointCloud]) -> PointCloud:
    """Concatenate clouds that share a frame (e.g. both LiDARs of one node)."""
    clouds = list(clouds)
    if not clouds:
        return PointCloud(np.zeros((0, 3)))
    frames = {c.frame for c in clouds}
    if len(frames) > 1:
        raise DataError(f"cannot merge clouds in different frames: {sorted(frames)}")
    return PointCloud(np.concatenate([c.points for c in clouds]), clouds[0].frame)


def track_from_absolute(times: Sequence[int], poses: Sequence[Se3Pose]) -> OdometryTrack:
    """Relative odometry track from absolute platform poses (re-anchored at the first sample)."""
    rot, trans = poses_to_arrays(poses)
    inv_r, inv_t = inverse_batch(rot[:1], trans[:1])
    rel_r, rel_t = compose_batch(inv_r, inv_t, rot, trans)
    relative = arrays_to_poses(rel_r, rel_t)
    relative[0] = Se3Pose.identity()
    return OdometryTrack(times, relative)
