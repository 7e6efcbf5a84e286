from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Literal, Optional, Tuple


class IcpConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_corr_dist: float = Field(0.5, gt=0, description="Correspondence distance bound (m)")
    max_iter: int = Field(50, ge=1, description="Iteration budget")
    tol: float = Field(1e-7, gt=0, description="Stop when the update twist norm falls below this")
    voxel: Optional[float] = Field(None, gt=0, description="Voxel size for downsampling both clouds (m)")
    method: Literal["point_to_point", "point_to_plane"] = Field("point_to_point", description="ICP objective")
    normal_neighbors: int = Field(8, ge=3, description="Neighbours used for the normal-space estimate")
    normal_ratio: float = Field(0.1, gt=0, lt=1, description="Eigenvalue ratio above which a direction counts as tangent")
    trim: float = Field(0.0, ge=0, lt=1, description="Fraction of the largest residuals dropped each iteration")


class LoopClosureConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dist_thresh: float = Field(5.0, gt=0, description="Candidate distance threshold (m)")
    min_time_gap: float = Field(30.0, ge=0, description="Minimum time gap inside one sequence (s)")
    min_fitness: float = Field(0.3, ge=0, le=1, description="Minimum ICP inlier fraction to accept an edge")


class EdgeWeightConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_floor_t: float = Field(1e-3, gt=0, description="Translation sigma floor (m)")
    sigma_floor_r: float = Field(1e-3, gt=0, description="Rotation sigma floor (rad)")
    odometry_sigma_t: float = Field(0.1, gt=0, description="Translation sigma of odometry fallback edges (m)")
    odometry_sigma_r: float = Field(0.05, gt=0, description="Rotation sigma of odometry fallback edges (rad)")


class NodeSelectionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_travel: float = Field(0.5, gt=0, description="Distance travelled that triggers a new node (m)")
    max_interval: float = Field(1.0, gt=0, description="Time that triggers a new node (s)")


class SplineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt_ns: int = Field(100_000_000, gt=0, description="Uniform knot spacing (ns)")
    max_iter: int = Field(50, ge=1, description="Levenberg-Marquardt iteration budget for fitting")
    jacobian_step: float = Field(1e-6, gt=0, description="Central-difference step for numeric Jacobians")


class BaConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cauchy_scale: float = Field(1.0, gt=0, description="Cauchy loss scale c (px)")
    prior_weight: float = Field(1.0, ge=0, description="Weight of the spline pose prior")
    schedule: List[Tuple[float, int]] = Field(
        default_factory=lambda: [(12.0, 25), (8.0, 25), (4.0, 25), (1.5, 50)],
        description="Outlier threshold (px) and LM iterations per stage",
    )
    optimize_intrinsics: bool = Field(True, description="Auto-calibrate camera intrinsics")
    optimize_rig_rotation: bool = Field(True, description="Auto-calibrate rig rotations")
    robust: bool = Field(True, description="Use the Cauchy loss; False uses plain squared loss")
    linear_solver: Literal["auto", "schur", "dense"] = Field("auto", description="Normal-equation solver")
    dense_below: int = Field(5000, ge=0, description="'auto' uses the dense solver below this many parameters")
    pair_max_dist: float = Field(10.0, gt=0, description="Pair selection distance threshold (m)")
    pair_max_angle: float = Field(60.0, gt=0, le=180, description="Pair selection viewing-angle threshold (deg)")
    tri_min_angle: float = Field(1.0, ge=0, description="Minimum triangulation angle (deg)")
    tri_max_reproj: float = Field(12.0, gt=0, description="Maximum mean reprojection error of a new track (px)")

    @field_validator("schedule")
    @classmethod
    def validate_schedule(cls, v: List[Tuple[float, int]]) -> List[Tuple[float, int]]:
        if not v:
            raise ValueError("schedule must contain at least one stage")
        thresholds = [t for t, _ in v]
        if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("schedule thresholds must be strictly decreasing")
        if any(t <= 0 for t in thresholds) or any(n < 0 for _, n in v):
            raise ValueError("schedule thresholds must be positive and iteration counts non-negative")
        return v


class RansacConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(1000, ge=1, description="Number of minimal hypotheses")
    inlier_px: float = Field(8.0, gt=0, description="Inlier reprojection threshold (px)")
    min_inliers: int = Field(12, ge=3, description="Inliers required for a localized result")
    seed: int = Field(0, description="Random seed for hypothesis sampling")


class NoiseConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    encoder_tick_std: float = Field(0.0, ge=0, description="Encoder noise (ticks per sample)")
    encoder_quantization: bool = Field(True, description="Quantize wheel rotation to encoder ticks")
    lidar_range_std: float = Field(0.0, ge=0, description="LiDAR range noise (m)")
    pixel_std: float = Field(0.0, ge=0, description="Feature pixel noise (px)")
    outlier_fraction: float = Field(0.0, ge=0, lt=1, description="Fraction of observations replaced by uniform pixels")
    init_pose_std_m: float = Field(0.0, ge=0, description="Initial image pose translation noise (m)")
    init_pose_std_deg: float = Field(0.0, ge=0, description="Initial image pose rotation noise (deg)")
    calib_rotation_std_deg: float = Field(0.0, ge=0, description="Noise on the rig rotations written to the dataset (deg)")
    calib_intrinsics_rel_std: float = Field(0.0, ge=0, description="Relative noise on the focal lengths written to the dataset")
    camera_delay_max_ms: float = Field(30.0, ge=0, description="Maximum per-image delay of the asynchronous cameras (ms)")


class WorldConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rooms_x: int = Field(2, ge=1)
    rooms_y: int = Field(2, ge=1)
    room_size: float = Field(8.0, gt=2)
    wall_height: float = Field(3.0, gt=0)
    door_width: float = Field(1.5, gt=0)
    landmark_density: float = Field(3.0, gt=0, description="Landmarks per metre of wall face")
    sequences: int = Field(3, ge=1)
    speed: float = Field(0.5, gt=0, le=1.0, description="Platform speed (m/s)")
    turn_rate: float = Field(0.5, gt=0, description="In-place turn rate (rad/s)")
    tour: Literal["rooms", "circle"] = Field("rooms", description="Room-to-room drive or a constant-twist circle per sequence")
    lidar_beams: int = Field(720, ge=8)
    lidar_rate_hz: float = Field(10.0, gt=0)
    lidar_max_range: float = Field(30.0, gt=0)
    camera_rate_hz: float = Field(1.0, gt=0)
    odometry_rate_hz: float = Field(50.0, gt=0)
    extra_cameras: bool = Field(False, description="Add four asynchronous cameras")
    query_images: int = Field(20, ge=0)
    wheel_base: float = Field(0.5, gt=0)
    wheel_radius: float = Field(0.1, gt=0)
    ticks_per_rev: int = Field(1024, ge=1)

    @model_validator(mode="after")
    def check_door(self) -> "WorldConfig":
        if self.door_width >= self.room_size - 1.0:
            raise ValueError("door_width must leave at least 0.5 m of wall on each side")
        return self


class PipelineConfig(BaseModel):
    """Flat key-value configuration for every stage. Unknown keys are rejected."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0

    world_rooms_x: int = 2
    world_rooms_y: int = 2
    world_room_size: float = 8.0
    world_wall_height: float = 3.0
    world_door_width: float = 1.5
    world_landmark_density: float = 3.0
    sequences: int = 3
    platform_speed: float = 0.5
    platform_turn_rate: float = 0.5
    platform_tour: Literal["rooms", "circle"] = "rooms"
    lidar_beams: int = 720
    lidar_rate_hz: float = 10.0
    lidar_max_range: float = 30.0
    camera_rate_hz: float = 1.0
    odometry_rate_hz: float = 50.0
    extra_cameras: bool = False
    query_images: int = 20
    wheel_base: float = 0.5
    wheel_radius: float = 0.1
    ticks_per_rev: int = 1024

    noise_encoder_tick_std: float = 0.0
    noise_encoder_quantization: bool = True
    noise_lidar_range_std: float = 0.0
    noise_pixel_std: float = 0.0
    noise_outlier_fraction: float = 0.0
    noise_init_pose_std_m: float = 0.0
    noise_init_pose_std_deg: float = 0.0
    noise_calib_rotation_std_deg: float = 0.0
    noise_calib_intrinsics_rel_std: float = 0.0
    noise_camera_delay_max_ms: float = 30.0

    spline_dt_ms: float = 100.0
    spline_fit_max_iter: int = 50

    icp_tol: float = 1e-7
    icp_rough_voxel: float = 0.5
    icp_rough_max_iter: int = 10
    icp_rough_max_corr_dist: float = 1.0
    icp_precise_max_iter: int = 50
    icp_precise_max_corr_dist: float = 0.3
    icp_precise_method: Literal["point_to_point", "point_to_plane"] = "point_to_plane"
    icp_precise_trim: float = 0.3

    node_min_travel: float = 0.5
    node_max_interval: float = 1.0

    loop_dist_thresh: float = 5.0
    loop_min_time_gap: float = 30.0
    loop_min_fitness: float = 0.3

    edge_sigma_floor_t: float = 1e-3
    edge_sigma_floor_r: float = 1e-3
    odometry_sigma_t: float = 0.1
    odometry_sigma_r: float = 0.05
    graph_max_iter: int = 50

    ba_cauchy_scale: float = 1.0
    ba_prior_weight: float = 1.0
    ba_schedule: str = "12:25,8:25,4:25,1.5:50"
    ba_optimize_intrinsics: bool = True
    ba_optimize_rig_rotation: bool = True
    ba_robust: bool = True
    ba_linear_solver: Literal["auto", "schur", "dense"] = "auto"
    ba_init_from: Literal["spline", "images"] = "spline"
    ba_pair_max_dist: float = 10.0
    ba_pair_max_angle: float = 60.0
    ba_tri_min_angle: float = 1.0
    ba_tri_max_reproj: float = 12.0

    ransac_iterations: int = 1000
    ransac_inlier_px: float = 8.0
    ransac_min_inliers: int = 12
    ransac_seed: int = 0

    lowfreq_cutoff: float = 0.25
    lowfreq_threshold: float = 20.0

    @field_validator("ba_schedule")
    @classmethod
    def validate_schedule_text(cls, v: str) -> str:
        parse_schedule(v)
        return v

    def world(self) -> WorldConfig:
        return WorldConfig(
            rooms_x=self.world_rooms_x, rooms_y=self.world_rooms_y, room_size=self.world_room_size,
            wall_height=self.world_wall_height, door_width=self.world_door_width,
            landmark_density=self.world_landmark_density, sequences=self.sequences,
            speed=self.platform_speed, turn_rate=self.platform_turn_rate, tour=self.platform_tour,
            lidar_beams=self.lidar_beams, lidar_rate_hz=self.lidar_rate_hz,
            lidar_max_range=self.lidar_max_range, camera_rate_hz=self.camera_rate_hz,
            odometry_rate_hz=self.odometry_rate_hz, extra_cameras=self.extra_cameras,
            query_images=self.query_images, wheel_base=self.wheel_base,
            wheel_radius=self.wheel_radius, ticks_per_rev=self.ticks_per_rev,
        )

    def noise(self) -> NoiseConfig:
        return NoiseConfig(
            encoder_tick_std=self.noise_encoder_tick_std,
            encoder_quantization=self.noise_encoder_quantization,
            lidar_range_std=self.noise_lidar_range_std,
            pixel_std=self.noise_pixel_std,
            outlier_fraction=self.noise_outlier_fraction,
            init_pose_std_m=self.noise_init_pose_std_m,
            init_pose_std_deg=self.noise_init_pose_std_deg,
            calib_rotation_std_deg=self.noise_calib_rotation_std_deg,
            calib_intrinsics_rel_std=self.noise_calib_intrinsics_rel_std,
            camera_delay_max_ms=self.noise_camera_delay_max_ms,
        )

    def spline(self) -> SplineConfig:
        return SplineConfig(dt_ns=int(round(self.spline_dt_ms * 1e6)), max_iter=self.spline_fit_max_iter)

    def icp_rough(self) -> IcpConfig:
        return IcpConfig(max_corr_dist=self.icp_rough_max_corr_dist, max_iter=self.icp_rough_max_iter,
                         tol=self.icp_tol, voxel=self.icp_rough_voxel)

    def icp_precise(self) -> IcpConfig:
        return IcpConfig(max_corr_dist=self.icp_precise_max_corr_dist, max_iter=self.icp_precise_max_iter,
                         tol=self.icp_tol, method=self.icp_precise_method, trim=self.icp_precise_trim)

    def node_selection(self) -> NodeSelectionConfig:
        return NodeSelectionConfig(min_travel=self.node_min_travel, max_interval=self.node_max_interval)

    def loop_closure(self) -> LoopClosureConfig:
        return LoopClosureConfig(dist_thresh=self.loop_dist_thresh, min_time_gap=self.loop_min_time_gap,
                                 min_fitness=self.loop_min_fitness)

    def edge_weights(self) -> EdgeWeightConfig:
        return EdgeWeightConfig(sigma_floor_t=self.edge_sigma_floor_t, sigma_floor_r=self.edge_sigma_floor_r,
                                odometry_sigma_t=self.odometry_sigma_t, odometry_sigma_r=self.odometry_sigma_r)

    def ba(self) -> BaConfig:
        return BaConfig(
            cauchy_scale=self.ba_cauchy_scale, prior_weight=self.ba_prior_weight,
            schedule=parse_schedule(self.ba_schedule),
            optimize_intrinsics=self.ba_optimize_intrinsics,
            optimize_rig_rotation=self.ba_optimize_rig_rotation,
            robust=self.ba_robust, linear_solver=self.ba_linear_solver,
            pair_max_dist=self.ba_pair_max_dist, pair_max_angle=self.ba_pair_max_angle,
            tri_min_angle=self.ba_tri_min_angle, tri_max_reproj=self.ba_tri_max_reproj,
        )

    def ransac(self) -> RansacConfig:
        return RansacConfig(iterations=self.ransac_iterations, inlier_px=self.ransac_inlier_px,
                            min_inliers=self.ransac_min_inliers, seed=self.ransac_seed)


def parse_schedule(text: str) -> List[Tuple[float, int]]:
    """
    Parse an outlier schedule such as "12:25,8:25,4:25".

    Args:
        text: Comma separated threshold:iterations pairs

    Returns:
        List of (threshold px, iterations) tuples, validated as a BaConfig schedule
    """
    stages = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        threshold, _, iterations = chunk.partition(":")
        if not iterations:
            raise ValueError(f"schedule stage '{chunk}' must be threshold:iterations")
        stages.append((float(threshold), int(iterations)))
    return BaConfig.validate_schedule(stages)
