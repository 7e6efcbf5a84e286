import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import CoverageError, DataError, DegenerateGeometryError, NoOverlapError
from src.geometry.se3 import Se3Pose, generalized_minus, se3_exp
from src.pointcloud.cloud import (
    LidarScan, OdometryTrack, PointCloud, merge_clouds, track_from_absolute, undistort_scan, voxel_downsample,
)
from src.pointcloud.icp import icp_align, kabsch
from src.validator import IcpConfig
from tests.helpers import box_corner, yaw_pose

NS = 1_000_000_000


def still_track(end_ns: int = NS) -> OdometryTrack:
    return OdometryTrack([0, end_ns], [Se3Pose.identity(), Se3Pose.identity()])


def test_undistort_stationary_platform_keeps_points(rng):
    points = rng.normal(size=(50, 3))
    scan = LidarScan(points, rng.uniform(0.0, 0.1, 50), 0)
    cloud = undistort_scan(scan, Se3Pose.identity(), still_track())
    assert_allclose(cloud.points, points, atol=1e-15)
    assert cloud.frame == "base"


def test_undistort_forward_motion():
    odom = OdometryTrack([0, NS // 10], [Se3Pose.identity(), Se3Pose(translation=(0.1, 0.0, 0.0))])
    scan = LidarScan([[0.0, 1.0, 0.0]], [0.05], 0)
    assert_allclose(undistort_scan(scan, Se3Pose.identity(), odom).points, [[0.05, 1.0, 0.0]], atol=1e-12)


def test_undistort_applies_extrinsic():
    scan = LidarScan([[1.0, 0.0, 0.0]], [0.0], 0)
    cloud = undistort_scan(scan, yaw_pose(np.pi / 2), still_track())
    assert_allclose(cloud.points, [[0.0, 1.0, 0.0]], atol=1e-12)


def test_undistort_with_identity_odometry_is_a_frame_change(rng):
    extrinsic = se3_exp(rng.normal(size=6))
    scan = LidarScan(rng.normal(size=(200, 3)) * 5.0, rng.uniform(0.0, 0.1, 200), 3 * NS)
    odom = OdometryTrack([0, 10 * NS], [Se3Pose.identity()] * 2)
    assert_allclose(undistort_scan(scan, extrinsic, odom).points, extrinsic.act(scan.points), atol=1e-12)


def test_undistort_requires_coverage():
    scan = LidarScan([[1.0, 0.0, 0.0]], [0.09], 0)
    with pytest.raises(CoverageError):
        undistort_scan(scan, Se3Pose.identity(), OdometryTrack([0, NS // 20], [Se3Pose.identity()] * 2))


def test_scan_offsets_must_lie_inside_the_period():
    with pytest.raises(DataError):
        LidarScan([[1.0, 0.0, 0.0]], [0.1], 0)
    with pytest.raises(DataError):
        LidarScan([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0.0], 0)


def test_odometry_track_interpolates_log_linearly():
    end = se3_exp([0.0, 0.0, 0.4, 1.0, 0.0, 0.0])
    track = OdometryTrack([0, NS], [Se3Pose.identity(), end])
    assert_allclose(track.pose_at(NS / 2).matrix(), se3_exp([0.0, 0.0, 0.2, 0.5, 0.0, 0.0]).matrix(), atol=1e-12)
    assert_allclose(track.relative(0, NS).matrix(), end.matrix(), atol=1e-12)
    with pytest.raises(CoverageError):
        track.pose_at(2 * NS)


def test_odometry_track_starts_at_identity():
    with pytest.raises(DataError):
        OdometryTrack([0, NS], [Se3Pose(translation=(1.0, 0.0, 0.0)), Se3Pose.identity()])


def test_track_from_absolute_reanchors(rng):
    start = se3_exp(rng.normal(size=6))
    step = se3_exp([0.0, 0.0, 0.1, 0.5, 0.0, 0.0])
    track = track_from_absolute([0, NS], [start, start.compose(step)])
    assert_allclose(track.poses[1].matrix(), step.matrix(), atol=1e-12)


def test_voxel_single_cell_centroid(rng):
    points = rng.uniform(0.1, 0.4, (20, 3))
    out = voxel_downsample(PointCloud(points), 0.5)
    assert_allclose(out.points, points.mean(axis=0, keepdims=True), atol=1e-12)


def test_voxel_grid_points_unchanged():
    grid = np.stack(np.meshgrid(np.arange(4.0), np.arange(4.0), np.arange(3.0)), axis=-1).reshape(-1, 3)
    out = voxel_downsample(PointCloud(grid), 0.5)
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, grid))


def test_voxel_matches_hash_map_oracle(rng):
    points = rng.uniform(0.0, 10.0, (100_000, 3))
    out = voxel_downsample(PointCloud(points), 1.0)
    cells = {}
    for p in points:
        cells.setdefault(tuple(np.floor(p).astype(int)), []).append(p)
    expected = np.array([np.mean(cells[key], axis=0) for key in sorted(cells)])
    assert len(out) == len(cells)
    assert_allclose(out.points, expected, atol=1e-12)


def test_voxel_rejects_non_positive_size():
    with pytest.raises(ValueError):
        voxel_downsample(PointCloud(np.zeros((1, 3))), 0.0)


def test_merge_clouds_requires_one_frame():
    merged = merge_clouds([PointCloud(np.zeros((2, 3))), PointCloud(np.ones((3, 3)))])
    assert len(merged) == 5
    with pytest.raises(DataError):
        merge_clouds([PointCloud(np.zeros((1, 3)), "base"), PointCloud(np.zeros((1, 3)), "lidar0")])


def test_kabsch_recovers_transform_and_rejects_collinear(rng):
    pose = se3_exp(rng.normal(size=6))
    source = rng.normal(size=(10, 3))
    assert_allclose(kabsch(source, pose.act(source)).matrix(), pose.matrix(), atol=1e-12)
    planar = np.column_stack([rng.normal(size=(10, 2)), np.zeros(10)])
    assert_allclose(kabsch(planar, pose.act(planar)).matrix(), pose.matrix(), atol=1e-12)
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        kabsch(line, line)


def test_icp_identical_clouds(rng):
    cloud = PointCloud(rng.uniform(0.0, 1.0, (1000, 3)))
    result = icp_align(cloud, cloud, Se3Pose.identity(), IcpConfig())
    assert_allclose(result.pose.matrix(), np.eye(4), atol=1e-12)
    assert result.fitness == 1.0
    assert result.rmse < 1e-12


def test_icp_recovers_known_transform(rng):
    points = rng.uniform(0.0, 1.0, (1000, 3))
    truth = se3_exp([0.02, -0.03, 0.05, 0.3, -0.2, 0.1])
    init = truth.compose(se3_exp([0.0, 0.0, np.radians(2.0), 0.02, 0.01, 0.0]))
    result = icp_align(PointCloud(points), PointCloud(truth.act(points)), init,
                       IcpConfig(max_corr_dist=0.5, max_iter=100, tol=1e-12))
    assert_allclose(generalized_minus(result.pose, truth), np.zeros(6), atol=1e-6)
    assert result.fitness == 1.0


def test_point_to_plane_recovers_known_transform(rng):
    points = box_corner(rng)
    truth = se3_exp([0.01, 0.02, -0.03, 0.05, 0.02, -0.04])
    cfg = IcpConfig(max_corr_dist=0.5, max_iter=100, tol=1e-12, method="point_to_plane")
    result = icp_align(PointCloud(points), PointCloud(truth.act(points)), Se3Pose.identity(), cfg)
    assert_allclose(generalized_minus(result.pose, truth), np.zeros(6), atol=1e-6)


def test_icp_disjoint_clouds_have_no_overlap(rng):
    source = PointCloud(rng.uniform(0.0, 1.0, (100, 3)))
    target = PointCloud(rng.uniform(0.0, 1.0, (100, 3)) + 100.0)
    with pytest.raises(NoOverlapError):
        icp_align(source, target, Se3Pose.identity(), IcpConfig(max_corr_dist=1.0))


def test_icp_rmse_history_is_recorded(rng):
    points = rng.uniform(0.0, 1.0, (500, 3))
    truth = se3_exp([0.0, 0.0, 0.02, 0.05, 0.0, 0.0])
    result = icp_align(PointCloud(points), PointCloud(truth.act(points)), Se3Pose.identity(), IcpConfig())
    assert len(result.history) == result.iterations
    assert result.history[-1] <= result.history[0]


@pytest.mark.parametrize("trim", [0.0, 0.2])
def test_point_to_point_rmse_never_increases(rng, trim):
    # every point keeps a match, so each step re-pairs no worse than the Kabsch fit it follows
    points = rng.uniform(0.0, 1.0, (500, 3))
    truth = se3_exp([0.05, -0.03, 0.1, 0.2, 0.1, -0.1])
    target = truth.act(points) + rng.normal(scale=0.005, size=points.shape)
    cfg = IcpConfig(max_corr_dist=10.0, max_iter=60, tol=1e-12, trim=trim)
    result = icp_align(PointCloud(points), PointCloud(target), Se3Pose.identity(), cfg)
    assert len(result.history) >= 3
    assert np.all(np.diff(result.history) <= 1e-12)
    assert result.rmse <= result.history[-1] + 1e-12
    assert result.fitness == 1.0
