"""
Bundle-adjustment problem types: images, landmarks, observations and the
problem container joining them with the rig, intrinsics and spline priors.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from src.errors import DataError
from src.geometry.camera import CameraIntrinsics, RigExtrinsic
from src.geometry.se3 import Se3Pose
from src.spline.se3_spline import Se3Spline


@dataclass(frozen=True)
class Observation:
    image_id: str
    landmark_id: str
    pixel: np.ndarray
    active: bool = True

    def __post_init__(self):
        pixel = np.array(self.pixel, dtype=float).reshape(2)
        pixel.setflags(write=False)
        object.__setattr__(self, "pixel", pixel)


@dataclass(frozen=True)
class Landmark:
    """World point of a feature track; untriangulated tracks carry triangulated=False."""

    landmark_id: str
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    triangulated: bool = True

    def __post_init__(self):
        position = np.array(self.position, dtype=float).reshape(3)
        position.setflags(write=False)
        object.__setattr__(self, "position", position)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    camera_id: str
    sequence_id: str
    stamp_ns: int
    pose: Se3Pose
    optimize_pose: bool = True


@dataclass(frozen=True)
class BaProblem:
    splines: Dict[str, Se3Spline]
    rig: Dict[str, RigExtrinsic]
    intrinsics: Dict[str, CameraIntrinsics]
    images: Dict[str, ImageRecord]
    landmarks: Dict[str, Landmark]
    observations: List[Observation]
    cauchy_scale: float = 1.0
    prior_weight: float = 1.0
    optimize_intrinsics: bool = False
    optimize_rig_rotation: bool = False

    def validate(self) -> None:
        for image in self.images.values():
            if image.camera_id not in self.intrinsics or image.camera_id not in self.rig:
                raise DataError(f"image '{image.image_id}' references unknown camera '{image.camera_id}'")
        for k, obs in enumerate(self.observations):
            if obs.image_id not in self.images:
                raise DataError(f"observation {k} references unknown image '{obs.image_id}'")
            if obs.landmark_id not in self.landmarks:
                raise DataError(f"observation {k} references unknown landmark '{obs.landmark_id}'")
        for extrinsic in self.rig.values():
            if not extrinsic.translation_fixed:
                raise DataError(f"rig camera '{extrinsic.camera_id}' must keep its translation fixed")

    def track_lengths(self) -> Dict[str, int]:
        """Active observation count per landmark."""
        counts = {landmark_id: 0 for landmark_id in self.landmarks}
        for obs in self.observations:
            if obs.active:
                counts[obs.landmark_id] = counts.get(obs.landmark_id, 0) + 1
        return counts

    def active_count(self) -> int:
        return sum(1 for obs in self.observations if obs.active)

    def camera_pose_prior(self, image: ImageRecord) -> Optional[Se3Pose]:
        """T_WB(t_i) * T_BC for the image, or None when its sequence has no spline covering t_i."""
        spline = self.splines.get(image.sequence_id)
        if spline is None or not bool(spline.contains(image.stamp_ns)):
            return None
        return spline.evaluate(image.stamp_ns).compose(self.rig[image.camera_id].pose)


def autocalibrate_flags(problem: BaProblem, optimize_intrinsics: bool,
                        optimize_rig_rotation: bool) -> BaProblem:
    """
    Choose which calibration blocks solve_ba may change. Rig translations always stay fixed.
    """
    rig = {camera_id: replace(extrinsic, translation_fixed=True) for camera_id, extrinsic in problem.rig.items()}
    return replace(problem, rig=rig, optimize_intrinsics=optimize_intrinsics,
                   optimize_rig_rotation=optimize_rig_rotation)


def initialize_image_poses(problem: BaProblem) -> BaProblem:
    """Replace every image pose by its spline prior T_WB(t_i) * T_BC where one exists."""
    images = {}
    for image_id, image in problem.images.items():
        prior = problem.camera_pose_prior(image)
        images[image_id] = image if prior is None else replace(image, pose=prior)
    return replace(problem, images=images)
