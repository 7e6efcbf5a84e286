"""
Room-to-room and circle tours, and assembly of a complete simulated dataset
(inputs, ground truth and a query set).
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.bundle.problem import ImageRecord, Landmark, Observation
from src.dataset.io import Dataset, GroundTruth
from src.geometry.camera import CameraIntrinsics
from src.geometry.se3 import Se3Pose, se3_exp, so3_exp_batch
from src.logger import Logger
from src.simulator.sensors import (
    NS, CameraRig, PlatformTrajectoryGT, TwistSegment, default_rig, render_image, sample_times,
    simulate_cameras, simulate_lidar, simulate_odometry, visible_landmarks,
)
from src.simulator.world import SyntheticWorld, build_room_world
from src.validator import NoiseConfig, PipelineConfig, WorldConfig

LIDAR_EXTRINSIC = Se3Pose((1.0, 0.0, 0.0, 0.0), (0.2, 0.0, 0.5))
SEQUENCE_SPACING_NS = 1_000 * NS
QUERY_WALL_CLEARANCE = 1.5
QUERY_ATTEMPTS = 1000
CIRCLE_REVOLUTIONS = 1.25


def _room_order(cfg: WorldConfig, transposed: bool) -> List[Tuple[int, int]]:
    """Boustrophedon order over the room cells."""
    outer, inner = (cfg.rooms_x, cfg.rooms_y) if transposed else (cfg.rooms_y, cfg.rooms_x)
    cells = []
    for a in range(outer):
        row = range(inner) if a % 2 == 0 else range(inner - 1, -1, -1)
        for b in row:
            cells.append((a, b) if transposed else (b, a))
    return cells


def _adjacent(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def tour_waypoints(world: SyntheticWorld, cfg: WorldConfig, sequence_index: int) -> np.ndarray:
    """
    Room-centre waypoints of one tour, returning to the start so the tour closes a loop.
    Even tours sweep rows first, odd tours columns first; a single room gets a square loop.
    """
    if cfg.rooms_x * cfg.rooms_y == 1:
        center = world.room_center(0, 0)
        r = 0.25 * cfg.room_size
        corners = [(-r, -r), (r, -r), (r, r), (-r, r), (-r, -r)]
        if sequence_index % 2:
            corners = corners[::-1]
        return np.array([center] + [center + np.array(c) for c in corners] + [center])
    cells = _room_order(cfg, transposed=bool(sequence_index % 2))
    route = list(cells)
    if not _adjacent(route[-1], route[0]):
        route += cells[-2::-1]
    else:
        route.append(route[0])
    return np.array([world.room_center(i, j) for i, j in route])


def plan_tour(waypoints: np.ndarray, speed: float, turn_rate: float, start_time_ns: int = 0,
              initial_spin: bool = False) -> PlatformTrajectoryGT:
    """
    Differential-drive tour: in-place turns towards each waypoint followed by straight drives.

    Args:
        waypoints: Planar waypoints (N, 2); the platform starts at the first one
        speed: Forward speed (m/s)
        turn_rate: In-place turn rate (rad/s)
        start_time_ns: Timestamp of the start pose
        initial_spin: Begin with a full in-place revolution

    Returns:
        PlatformTrajectoryGT with integer-nanosecond segment durations
    """
    waypoints = np.asarray(waypoints, dtype=float)
    first = waypoints[1] - waypoints[0] if len(waypoints) > 1 else np.array([1.0, 0.0])
    heading = float(np.arctan2(first[1], first[0]))
    start = Se3Pose.from_rt(so3_exp_batch(np.array([[0.0, 0.0, heading]]))[0], [waypoints[0][0], waypoints[0][1], 0.0])
    segments: List[TwistSegment] = []

    def turn(angle: float) -> None:
        if abs(angle) < 1e-12:
            return
        duration = max(int(round(abs(angle) / turn_rate * NS)), 1)
        segments.append(TwistSegment(duration, np.array([0.0, 0.0, angle * NS / duration, 0.0, 0.0, 0.0])))

    if initial_spin:
        turn(2.0 * np.pi)
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        delta = b - a
        distance = float(np.linalg.norm(delta))
        if distance < 1e-9:
            continue
        target = float(np.arctan2(delta[1], delta[0]))
        turn(float(np.angle(np.exp(1j * (target - heading)))))
        heading = target
        duration = max(int(round(distance / speed * NS)), 1)
        segments.append(TwistSegment(duration, np.array([0.0, 0.0, 0.0, distance * NS / duration, 0.0, 0.0])))
    return PlatformTrajectoryGT(start, segments, start_time_ns)


def plan_circle(center: np.ndarray, radius: float, speed: float, phase: float = 0.0,
                clockwise: bool = False, start_time_ns: int = 0,
                revolutions: float = CIRCLE_REVOLUTIONS) -> PlatformTrajectoryGT:
    """
    One constant-twist segment driving around a circle, starting at angle phase
    with the heading tangent to the circle.

    A constant body twist is reproduced exactly by a cumulative cubic spline,
    which makes these tours the noise-free reference for the whole chain.
    """
    sign = -1.0 if clockwise else 1.0
    xy = np.asarray(center, dtype=float) + radius * np.array([np.cos(phase), np.sin(phase)])
    heading = phase + sign * 0.5 * np.pi
    start = Se3Pose.from_rt(so3_exp_batch(np.array([[0.0, 0.0, heading]]))[0], [xy[0], xy[1], 0.0])
    duration = max(int(round(revolutions * 2.0 * np.pi * radius / speed * NS)), 1)
    twist = np.array([0.0, 0.0, sign * speed / radius, speed, 0.0, 0.0])
    return PlatformTrajectoryGT(start, [TwistSegment(duration, twist)], start_time_ns)


def sequence_trajectory(world: SyntheticWorld, cfg: WorldConfig, sequence_index: int) -> PlatformTrajectoryGT:
    """
    Trajectory of one sequence. Circle tours share the first room so every
    sequence overlaps the others; radius, phase and direction vary per sequence.
    """
    start_ns = sequence_index * SEQUENCE_SPACING_NS
    if cfg.tour == "circle":
        radius = cfg.room_size * (0.25 + 0.05 * (sequence_index % 3))
        return plan_circle(world.room_center(0, 0), radius, cfg.speed, sequence_index * np.pi / 3,
                           bool(sequence_index % 2), start_ns)
    waypoints = tour_waypoints(world, cfg, sequence_index)
    return plan_tour(waypoints, cfg.speed, cfg.turn_rate, start_ns, initial_spin=sequence_index >= 2)


@dataclass
class Simulation:
    dataset: Dataset
    world: SyntheticWorld
    trajectories: Dict[str, PlatformTrajectoryGT]
    rig: CameraRig


def _perturb(pose: Se3Pose, rng: np.random.Generator, std_m: float, std_deg: float) -> Se3Pose:
    if std_m == 0 and std_deg == 0:
        return pose
    xi = np.concatenate([rng.normal(0.0, np.radians(std_deg), 3), rng.normal(0.0, std_m, 3)])
    return pose.compose(se3_exp(xi))


def _noisy_rig(rig: CameraRig, noise: NoiseConfig, rng: np.random.Generator) -> CameraRig:
    extrinsics, intrinsics = {}, {}
    for camera_id in sorted(rig.extrinsics):
        extrinsic = rig.extrinsics[camera_id]
        if noise.calib_rotation_std_deg > 0:
            delta = so3_exp_batch(rng.normal(0.0, np.radians(noise.calib_rotation_std_deg), (1, 3)))[0]
            extrinsic = extrinsic.with_rotation(extrinsic.pose.rotation @ delta)
        extrinsics[camera_id] = extrinsic
        intr = rig.intrinsics[camera_id]
        if noise.calib_intrinsics_rel_std > 0:
            scale = 1.0 + rng.normal(0.0, noise.calib_intrinsics_rel_std, 2)
            intr = intr.model_copy(update={"fx": intr.fx * scale[0], "fy": intr.fy * scale[1]})
        intrinsics[camera_id] = intr
    return CameraRig(extrinsics, intrinsics, rig.asynchronous)


def _query_view(world: SyntheticWorld, cfg: WorldConfig, extrinsic: Se3Pose, intrinsics: CameraIntrinsics,
                rng: np.random.Generator, mapped: np.ndarray, min_landmarks: int):
    """Random query pose that sees at least min_landmarks mapped landmarks, else the best attempt."""
    best = None
    for _ in range(QUERY_ATTEMPTS):
        i, j = int(rng.integers(cfg.rooms_x)), int(rng.integers(cfg.rooms_y))
        lo = np.array([i, j]) * cfg.room_size + QUERY_WALL_CLEARANCE
        xy = rng.uniform(lo, lo + cfg.room_size - 2 * QUERY_WALL_CLEARANCE)
        yaw = rng.uniform(-np.pi, np.pi)
        platform = Se3Pose.from_rt(so3_exp_batch(np.array([[0.0, 0.0, yaw]]))[0], [xy[0], xy[1], 0.0])
        pose = platform.compose(extrinsic)
        idx, pixels = visible_landmarks(world, pose, intrinsics)
        seen = int(np.count_nonzero(mapped[idx]))
        if best is None or seen > best[0]:
            best = (seen, pose, idx, pixels)
        if seen >= min_landmarks:
            break
    return best


def _mapped_landmarks(world: SyntheticWorld, images: Dict[str, ImageRecord],
                      observations: List[Observation]) -> np.ndarray:
    """Landmarks observed at three or more distinct image timestamps, so the map can triangulate them."""
    stamps: Dict[int, set] = {}
    for obs in observations:
        stamps.setdefault(int(obs.landmark_id[1:]), set()).add(images[obs.image_id].stamp_ns)
    mapped = np.zeros(len(world.landmarks), dtype=bool)
    for index, seen in stamps.items():
        mapped[index] = len(seen) >= 3
    return mapped


def _query_set(world: SyntheticWorld, cfg: WorldConfig, rig: CameraRig, noise: NoiseConfig,
               rng: np.random.Generator, mapped: np.ndarray, min_landmarks: int,
               logger: Optional[Logger] = None) -> Dataset:
    """cam0 query images at random poses, each placed to see enough mapped landmarks to localize."""
    camera_id = "cam0"
    intrinsics = rig.intrinsics[camera_id]
    extrinsic = rig.extrinsics[camera_id].pose
    queries = Dataset(cameras={camera_id: intrinsics}, rig={camera_id: extrinsic},
                      sequences={"queries": Se3Pose.identity()}, ground_truth=GroundTruth())
    gt = queries.ground_truth
    gt.cameras, gt.rig = dict(queries.cameras), dict(queries.rig)
    ids = world.landmark_ids
    for k in range(cfg.query_images):
        seen, pose, idx, pixels = _query_view(world, cfg, extrinsic, intrinsics, rng, mapped, min_landmarks)
        query_id = f"q{k:04d}"
        if seen < min_landmarks and logger is not None:
            logger.add_log(f"query {query_id}: only {seen} mapped landmark(s) in view after {QUERY_ATTEMPTS} attempts")
        if noise.pixel_std > 0 and len(idx):
            pixels = pixels + rng.normal(0.0, noise.pixel_std, pixels.shape)
        for landmark, pixel in zip(idx, pixels):
            queries.observations.append(Observation(query_id, ids[landmark], pixel))
            queries.landmarks.setdefault(ids[landmark], Landmark(ids[landmark], triangulated=False))
        stamp = k * NS
        queries.images[query_id] = ImageRecord(query_id, camera_id, "queries", stamp, Se3Pose.identity())
        gt.images[query_id] = ImageRecord(query_id, camera_id, "queries", stamp, pose)
        # every fourth query is blurred into a low-frequency image
        queries.pictures[query_id] = render_image(intrinsics, pixels, rng, blur_sigma=4.0 if k % 4 == 3 else 0.0)
    gt.landmarks = {lid: Landmark(lid, world.landmarks[int(lid[1:])]) for lid in queries.landmarks}
    queries.landmarks = dict(sorted(queries.landmarks.items()))
    gt.landmarks = dict(sorted(gt.landmarks.items()))
    return queries


def simulate_dataset(config: PipelineConfig, seed: Optional[int] = None,
                     logger: Optional[Logger] = None) -> Simulation:
    """
    Simulate every sensor of every sequence and assemble the dataset.

    The dataset carries noisy inputs (odometry, scans, observations, perturbed
    initial image poses and calibration), untriangulated landmark tracks, the
    query set and a ground_truth section with exact poses, landmark positions and
    outlier labels. The same seed reproduces identical output.
    """
    seed = config.seed if seed is None else seed
    cfg, noise = config.world(), config.noise()
    rng = np.random.default_rng(seed)
    world = build_room_world(cfg, seed)
    rig = default_rig(cfg.extra_cameras)
    noisy = _noisy_rig(rig, noise, rng)

    dataset = Dataset(ground_truth=GroundTruth())
    gt = dataset.ground_truth
    dataset.cameras = dict(noisy.intrinsics)
    dataset.lidars = ["lidar0"]
    dataset.rig = {cid: noisy.extrinsics[cid].pose for cid in sorted(noisy.extrinsics)}
    dataset.rig["lidar0"] = LIDAR_EXTRINSIC
    gt.cameras = dict(rig.intrinsics)
    gt.lidars = ["lidar0"]
    gt.rig = {cid: rig.extrinsics[cid].pose for cid in sorted(rig.extrinsics)}
    gt.rig["lidar0"] = LIDAR_EXTRINSIC

    trajectories = {}
    for k in range(cfg.sequences):
        sequence_id = f"seq{k}"
        traj = sequence_trajectory(world, cfg, k)
        trajectories[sequence_id] = traj
        dataset.sequences[sequence_id] = traj.start_pose
        times = sample_times(traj, cfg.odometry_rate_hz)
        rot, trans = traj.poses_at(times)
        gt.trajectory[sequence_id] = [(int(t), Se3Pose.from_rt(r, p)) for t, r, p in zip(times, rot, trans)]

        dataset.odometry[sequence_id] = simulate_odometry(traj, cfg.wheel_base, cfg.ticks_per_rev, cfg.wheel_radius,
                                                          cfg.odometry_rate_hz, noise, rng)
        dataset.scans[sequence_id] = simulate_lidar(world, traj, LIDAR_EXTRINSIC, cfg.lidar_rate_hz, cfg.lidar_beams,
                                                    noise, cfg.lidar_max_range, "lidar0", rng)
        capture = simulate_cameras(world, traj, rig, cfg.camera_rate_hz, noise, sequence_id, rng)
        for image in capture.images:
            gt.images[image.image_id] = image
            dataset.images[image.image_id] = replace(
                image, pose=_perturb(image.pose, rng, noise.init_pose_std_m, noise.init_pose_std_deg))
        dataset.observations.extend(capture.observations)
        gt.outliers.extend(sorted(capture.outliers))
        if logger is not None:
            logger.add_log(f"simulate {sequence_id}: {(traj.end_ns - traj.start_ns) / NS:.1f} s, "
                           f"{len(dataset.scans[sequence_id])} scans, {len(capture.images)} images, "
                           f"{len(capture.observations)} observations")

    observed = sorted({obs.landmark_id for obs in dataset.observations})
    dataset.landmarks = {lid: Landmark(lid, triangulated=False) for lid in observed}
    gt.landmarks = {lid: Landmark(lid, world.landmarks[int(lid[1:])]) for lid in observed}
    mapped = _mapped_landmarks(world, gt.images, dataset.observations)
    dataset.queries = _query_set(world, cfg, rig, noise, rng, mapped, config.ransac_min_inliers, logger)
    return Simulation(dataset, world, trajectories, rig)
