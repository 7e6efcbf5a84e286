import numpy as np

from src.geometry.se3 import Se3Pose, so3_exp_batch
from src.validator import PipelineConfig


def yaw_pose(yaw: float, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Se3Pose:
    return Se3Pose.from_rt(so3_exp_batch(np.array([[0.0, 0.0, yaw]]))[0], [x, y, z])


def looking_at(eye, target) -> Se3Pose:
    """Camera pose T_WC at eye whose optical axis (+z) points at target, x axis horizontal."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, [0.0, 0.0, 1.0])
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Se3Pose.from_rt(np.column_stack([x, y, z]), eye)


def box_corner(rng, n: int = 600, size: float = 2.0) -> np.ndarray:
    """Points on three orthogonal planes, enough structure to constrain every direction."""
    a, b = rng.uniform(0.0, size, (2, n))
    face = rng.integers(0, 3, n)
    zero = np.zeros(n)
    faces = [np.column_stack([zero, a, b]), np.column_stack([a, zero, b]), np.column_stack([a, b, zero])]
    return np.select([np.repeat((face == k)[:, None], 3, axis=1) for k in range(3)], faces)


def small_pipeline_config() -> PipelineConfig:
    """One room, two circle tours, sparse LiDAR: fast enough for end-to-end tests."""
    return PipelineConfig(
        seed=7,
        world_rooms_x=1,
        world_rooms_y=1,
        world_room_size=8.0,
        world_landmark_density=4.0,
        sequences=2,
        platform_speed=1.0,
        platform_turn_rate=1.0,
        platform_tour="circle",
        lidar_beams=180,
        camera_rate_hz=1.0,
        odometry_rate_hz=50.0,
        query_images=8,
        noise_encoder_quantization=False,
        noise_camera_delay_max_ms=0.0,
        loop_min_time_gap=10.0,
    )
