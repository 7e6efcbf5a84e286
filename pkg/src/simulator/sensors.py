"""
Sensor models driven by an analytic platform trajectory: differential-drive
wheel encoders, a single-ring rotating LiDAR and a multi-camera rig.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from src.bundle.problem import ImageRecord, Observation
from src.errors import OutOfDomainError
from src.geometry.camera import CameraIntrinsics, RigExtrinsic, project_points
from src.geometry.se3 import Se3Pose, arrays_to_poses, compose_batch, se3_exp, se3_exp_batch
from src.localize.lowfreq import GrayImage
from src.pointcloud.cloud import LidarScan, OdometryTrack
from src.simulator.world import SyntheticWorld, occluded, ray_cast
from src.spline.se3_spline import Se3Spline
from src.validator import NoiseConfig

NS = 1_000_000_000
MIN_VIEW_DEPTH = 0.1
MAX_VIEW_RANGE = 15.0


class PoseSource(Protocol):
    """Anything that yields platform poses T_WB over an interval of integer nanoseconds."""

    @property
    def start_ns(self) -> int: ...

    @property
    def end_ns(self) -> int: ...

    def poses_at(self, t) -> Tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class TwistSegment:
    duration_ns: int
    twist: np.ndarray  # body twist rate [omega, v] per second


@dataclass(frozen=True)
class PlatformTrajectoryGT:
    """Piecewise constant-twist motion; each segment is applied on the right of the pose reached so far."""

    start_pose: Se3Pose
    segments: List[TwistSegment]
    start_time_ns: int = 0
    _boundaries: np.ndarray = field(init=False, repr=False, compare=False)
    _starts: List[Se3Pose] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        durations = [int(s.duration_ns) for s in self.segments]
        if any(d <= 0 for d in durations):
            raise ValueError("trajectory segments need positive durations")
        boundaries = self.start_time_ns + np.concatenate([[0], np.cumsum(durations, dtype=np.int64)])
        starts = [self.start_pose]
        for segment in self.segments:
            starts.append(starts[-1].compose(se3_exp(np.asarray(segment.twist) * segment.duration_ns / NS)))
        object.__setattr__(self, "_boundaries", boundaries.astype(np.int64))
        object.__setattr__(self, "_starts", starts)

    @property
    def start_ns(self) -> int:
        return int(self._boundaries[0])

    @property
    def end_ns(self) -> int:
        return int(self._boundaries[-1])

    @property
    def boundaries(self) -> np.ndarray:
        return self._boundaries

    def segment_index(self, t: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self._boundaries, t, side="right") - 1
        return np.clip(k, 0, max(len(self.segments) - 1, 0))

    def poses_at(self, t) -> Tuple[np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if len(t) and (t.min() < self.start_ns or t.max() > self.end_ns):
            raise OutOfDomainError("trajectory evaluated outside its duration", (self.start_ns, self.end_ns))
        if not self.segments:
            rot = np.repeat(self.start_pose.rotation[None], len(t), axis=0)
            return rot, np.repeat(self.start_pose.translation[None], len(t), axis=0)
        k = self.segment_index(t)
        tau = (t - self._boundaries[k]) / NS
        twists = np.stack([self.segments[i].twist for i in k]) * tau[:, None]
        step_r, step_t = se3_exp_batch(twists)
        base_r = np.stack([self._starts[i].rotation for i in k])
        base_t = np.stack([self._starts[i].translation for i in k])
        return compose_batch(base_r, base_t, step_r, step_t)


def gt_pose(traj: PlatformTrajectoryGT, t: int) -> Se3Pose:
    """
    Exact platform pose at t (ns).

    Raises:
        OutOfDomainError: t outside the trajectory duration
    """
    rot, trans = traj.poses_at([t])
    return Se3Pose.from_rt(rot[0], trans[0])


@dataclass(frozen=True)
class SplinePoseSource:
    """Adapter so a spline can stand in as exact ground truth."""

    spline: Se3Spline

    @property
    def start_ns(self) -> int:
        return int(self.spline.domain[0])

    @property
    def end_ns(self) -> int:
        return int(self.spline.domain[1]) - 1

    def poses_at(self, t) -> Tuple[np.ndarray, np.ndarray]:
        return self.spline.evaluate_batch(np.round(np.atleast_1d(t)).astype(np.int64))


def sample_times(traj: PoseSource, rate_hz: float) -> np.ndarray:
    """Regular samples at rate_hz plus every segment boundary, as sorted unique integer ns."""
    step = int(round(NS / rate_hz))
    regular = np.arange(traj.start_ns, traj.end_ns + 1, step, dtype=np.int64)
    boundaries = getattr(traj, "boundaries", np.zeros(0, dtype=np.int64))
    return np.unique(np.concatenate([regular, boundaries, [traj.end_ns]]).astype(np.int64))


def _planar_state(traj: PlatformTrajectoryGT, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Arc length and heading change travelled since the start (forward speed and yaw rate per segment)."""
    arc_at = [0.0]
    yaw_at = [0.0]
    for segment in traj.segments:
        arc_at.append(arc_at[-1] + segment.twist[3] * segment.duration_ns / NS)
        yaw_at.append(yaw_at[-1] + segment.twist[2] * segment.duration_ns / NS)
    if not traj.segments:
        return np.zeros(len(times)), np.zeros(len(times))
    k = traj.segment_index(times)
    tau = (times - traj.boundaries[k]) / NS
    speed = np.array([traj.segments[i].twist[3] for i in k])
    yaw_rate = np.array([traj.segments[i].twist[2] for i in k])
    return np.asarray(arc_at)[k] + speed * tau, np.asarray(yaw_at)[k] + yaw_rate * tau


def simulate_odometry(
    traj: PlatformTrajectoryGT,
    wheel_base: float,
    ticks_per_rev: int,
    wheel_radius: float,
    rate: float,
    noise: NoiseConfig,
    rng: Optional[np.random.Generator] = None,
) -> OdometryTrack:
    """
    Wheel odometry of a differential drive following the planar projection of traj.

    Wheel angles come from the inverse kinematics (phi = (s -+ b/2 * yaw) / r), are
    optionally quantized to encoder ticks, perturbed by per-sample tick noise, and
    integrated forward with the exact constant-curvature step.

    Returns:
        OdometryTrack relative to the platform pose at the first sample
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    times = sample_times(traj, rate)
    arc, yaw = _planar_state(traj, times)
    half = 0.5 * wheel_base
    ticks_per_rad = ticks_per_rev / (2.0 * np.pi)
    counts = np.stack([(arc - half * yaw) / wheel_radius, (arc + half * yaw) / wheel_radius], axis=1) * ticks_per_rad
    if noise.encoder_quantization:
        counts = np.floor(counts)
    increments = np.diff(counts, axis=0)
    if noise.encoder_tick_std > 0:
        increments = increments + rng.normal(0.0, noise.encoder_tick_std, increments.shape)
    wheel = increments / ticks_per_rad * wheel_radius
    d_arc = 0.5 * (wheel[:, 0] + wheel[:, 1])
    d_yaw = (wheel[:, 1] - wheel[:, 0]) / wheel_base
    steps = np.zeros((len(d_arc), 6))
    steps[:, 2] = d_yaw
    steps[:, 3] = d_arc
    step_r, step_t = se3_exp_batch(steps)

    rot = np.zeros((len(times), 3, 3))
    trans = np.zeros((len(times), 3))
    rot[0] = np.eye(3)
    for k in range(len(steps)):
        rot[k + 1] = rot[k] @ step_r[k]
        trans[k + 1] = rot[k] @ step_t[k] + trans[k]
    poses = arrays_to_poses(rot, trans)
    poses[0] = Se3Pose.identity()
    return OdometryTrack(times, poses)


def odometry_from_trajectory(traj: PoseSource, rate: float,
                             times: Optional[np.ndarray] = None) -> OdometryTrack:
    """Exact relative track T_WB(t0)^-1 T_WB(t) sampled like simulate_odometry."""
    if times is None:
        times = sample_times(traj, rate)
    rot, trans = traj.poses_at(times)
    inv_r = np.swapaxes(rot[:1], 1, 2)
    inv_t = -np.einsum("nij,nj->ni", inv_r, trans[:1])
    rel_r, rel_t = compose_batch(np.repeat(inv_r, len(times), axis=0), np.repeat(inv_t, len(times), axis=0),
                                 rot, trans)
    poses = arrays_to_poses(rel_r, rel_t)
    poses[0] = Se3Pose.identity()
    return OdometryTrack(times, poses)


def simulate_lidar(
    world: SyntheticWorld,
    traj: PoseSource,
    extrinsic: Se3Pose,
    rate: float = 10.0,
    beams: int = 720,
    noise: Optional[NoiseConfig] = None,
    max_range: float = 30.0,
    lidar_id: str = "lidar0",
    rng: Optional[np.random.Generator] = None,
) -> List[LidarScan]:
    """
    Single horizontal ring LiDAR. Beam k of a revolution fires at k/beams of the
    period from the moving sensor pose T_WB(t) T_BL; misses are dropped.

    Returns:
        One LidarScan per complete revolution inside the trajectory
    """
    noise = noise or NoiseConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    period_ns = int(round(NS / rate))
    period = period_ns / NS
    offsets = np.arange(beams) * (period / beams)
    azimuth = 2.0 * np.pi * np.arange(beams) / beams
    local_dirs = np.column_stack([np.cos(azimuth), np.sin(azimuth), np.zeros(beams)])
    scans = []
    stamp = traj.start_ns
    while stamp + period_ns <= traj.end_ns:
        rot, trans = traj.poses_at(stamp + offsets * NS)
        sensor_r = rot @ extrinsic.rotation
        sensor_t = np.einsum("nij,j->ni", rot, extrinsic.translation) + trans
        dirs = np.einsum("nij,nj->ni", sensor_r, local_dirs)[:, :2]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ranges = ray_cast(world, sensor_t[:, :2], dirs, max_range)
        hit = np.isfinite(ranges)
        if noise.lidar_range_std > 0:
            ranges = ranges + rng.normal(0.0, noise.lidar_range_std, beams)
        points = local_dirs[hit] * ranges[hit, None]
        scans.append(LidarScan(points, offsets[hit], stamp, lidar_id, period))
        stamp += period_ns
    return scans


def camera_rotation(yaw: float, pitch: float) -> np.ndarray:
    """R_BC of a camera looking along yaw, tilted up by pitch (z forward, x right, y down)."""
    cp, sp, cy, sy = np.cos(pitch), np.sin(pitch), np.cos(yaw), np.sin(yaw)
    z_c = np.array([cp * cy, cp * sy, sp])
    x_c = np.array([sy, -cy, 0.0])
    y_c = np.cross(z_c, x_c)
    return np.column_stack([x_c, y_c, z_c])


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class CameraRig:
    extrinsics: Dict[str, RigExtrinsic]
    intrinsics: Dict[str, CameraIntrinsics]
    asynchronous: Set[str] = field(default_factory=set)


def default_rig(extra_cameras: bool = False) -> CameraRig:
    """
    Six cameras at 60 degree yaw spacing, pitched up 10 degrees, 0.2 m from the
    mast at 1.5 m height; optionally four asynchronous cameras at the diagonals.
    """
    extrinsics, intrinsics, asynchronous = {}, {}, set()
    for k in range(6):
        yaw = np.radians(60.0 * k)
        camera_id = f"cam{k}"
        pose = Se3Pose.from_rt(camera_rotation(yaw, np.radians(10.0)),
                               [0.2 * np.cos(yaw), 0.2 * np.sin(yaw), 1.5])
        extrinsics[camera_id] = RigExtrinsic(camera_id, pose)
        intrinsics[camera_id] = default_intrinsics()
    if extra_cameras:
        for k in range(4):
            yaw = np.radians(45.0 + 90.0 * k)
            camera_id = f"cam{6 + k}"
            pose = Se3Pose.from_rt(camera_rotation(yaw, 0.0), [0.1 * np.cos(yaw), 0.1 * np.sin(yaw), 1.2])
            extrinsics[camera_id] = RigExtrinsic(camera_id, pose)
            intrinsics[camera_id] = default_intrinsics()
            asynchronous.add(camera_id)
    return CameraRig(extrinsics, intrinsics, asynchronous)


def visible_landmarks(world: SyntheticWorld, camera_pose: Se3Pose, intrinsics: CameraIntrinsics,
                      max_range: float = MAX_VIEW_RANGE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Indices of landmarks seen by a camera and their noiseless pixels.

    A landmark is visible when it is in front of the camera, projects inside the
    image, faces the camera and no wall lies between them.
    """
    if len(world.landmarks) == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 2))
    eye = camera_pose.translation
    p_cam = camera_pose.inverse().act(world.landmarks)
    dist = np.linalg.norm(world.landmarks - eye, axis=1)
    facing = np.einsum("ij,ij->i", world.normals, eye - world.landmarks) > 0
    candidate = (p_cam[:, 2] > MIN_VIEW_DEPTH) & (dist <= max_range) & (facing | ~np.any(world.normals, axis=1))
    idx = np.flatnonzero(candidate)
    if len(idx) == 0:
        return idx, np.zeros((0, 2))
    pixels = project_points(intrinsics, p_cam[idx])
    inside = intrinsics.in_bounds(pixels)
    idx, pixels = idx[inside], pixels[inside]
    clear = ~occluded(world, eye, world.landmarks[idx])
    return idx[clear], pixels[clear]


@dataclass
class CameraCapture:
    images: List[ImageRecord]            # ground-truth poses
    observations: List[Observation]
    outliers: Set[Tuple[str, str]]


def simulate_cameras(
    world: SyntheticWorld,
    traj: PoseSource,
    rig: CameraRig,
    rate: float,
    noise: NoiseConfig,
    sequence_id: str = "seq0",
    rng: Optional[np.random.Generator] = None,
) -> CameraCapture:
    """
    Feature observations of every rig camera at rate Hz.

    Asynchronous cameras fire with a random delay up to noise.camera_delay_max_ms.
    Pixel noise is added to every observation, then a fraction of them is
    replaced by uniform random pixels and labelled as outliers.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    period_ns = int(round(NS / rate))
    max_delay_ns = int(round(noise.camera_delay_max_ms * 1e6))
    ids = world.landmark_ids
    images, observations, outliers = [], [], set()
    frame = 0
    stamp = traj.start_ns
    while stamp + (max_delay_ns if rig.asynchronous else 0) <= traj.end_ns:
        for camera_id in sorted(rig.extrinsics):
            t = stamp
            if camera_id in rig.asynchronous and max_delay_ns > 0:
                t = stamp + int(rng.integers(0, max_delay_ns + 1))
            rot, trans = traj.poses_at([t])
            pose = Se3Pose.from_rt(rot[0], trans[0]).compose(rig.extrinsics[camera_id].pose)
            image_id = f"{sequence_id}_{camera_id}_{frame:05d}"
            images.append(ImageRecord(image_id, camera_id, sequence_id, int(t), pose))
            intrinsics = rig.intrinsics[camera_id]
            idx, pixels = visible_landmarks(world, pose, intrinsics)
            if noise.pixel_std > 0 and len(idx):
                pixels = pixels + rng.normal(0.0, noise.pixel_std, pixels.shape)
            for k, pixel in zip(idx, pixels):
                observations.append(Observation(image_id, ids[k], pixel))
        frame += 1
        stamp += period_ns

    if noise.outlier_fraction > 0 and observations:
        count = int(round(noise.outlier_fraction * len(observations)))
        chosen = np.sort(rng.choice(len(observations), count, replace=False))
        by_image = {im.image_id: im for im in images}
        for k in chosen:
            obs = observations[k]
            intrinsics = rig.intrinsics[by_image[obs.image_id].camera_id]
            pixel = rng.uniform([0.0, 0.0], [intrinsics.width, intrinsics.height])
            observations[k] = Observation(obs.image_id, obs.landmark_id, pixel)
            outliers.add((obs.image_id, obs.landmark_id))
    return CameraCapture(images, observations, outliers)


def render_image(intrinsics: CameraIntrinsics, pixels: np.ndarray, rng: np.random.Generator,
                 blur_sigma: float = 0.0) -> GrayImage:
    """
    Grayscale stand-in for a camera frame: vertical wall shading, a bright blob at
    every observed landmark and mild sensor noise; blur_sigma > 0 smooths the
    result into a low-frequency image.
    """
    h, w = intrinsics.height, intrinsics.width
    rows = np.linspace(60.0, 180.0, h)[:, None]
    image = np.repeat(rows, w, axis=1)
    blobs = np.zeros((h, w))
    for u, v in np.asarray(pixels, dtype=float).reshape(-1, 2):
        x, y = int(round(u)), int(round(v))
        if 0 <= x < w and 0 <= y < h:
            blobs[y, x] = 1.0
    image = image + 70.0 * np.minimum(gaussian_filter(blobs, 1.5) * 14.0, 1.0)
    image = image + rng.normal(0.0, 2.0, image.shape)
    if blur_sigma > 0:
        image = gaussian_filter(image, blur_sigma)
    return GrayImage(np.clip(image, 0.0, 255.0))
