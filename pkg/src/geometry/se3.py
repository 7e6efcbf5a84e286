"""
SE(3)/SO(3) manifold math.

Conventions used everywhere in trajforge:
  - quaternions are stored scalar-first (w, x, y, z), normalized, with w >= 0;
  - a twist is a 6-vector [rotational (rad), translational (m)];
  - Se3Pose T_AB maps points from frame B into frame A: p_A = R p_B + t;
  - generalized_minus(a, b) = log(b^-1 a), the right-side difference used by
    every residual in the pose graph and in bundle adjustment.
"""

from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.errors import IllConditionedLogError

SMALL_ANGLE = 1e-8
LOG_SINGULARITY = 1e-9


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, or a stack of them for shape (N, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _exp_coefficients(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # A = sin(th)/th, B = (1 - cos th)/th^2, C = (th - sin th)/th^3
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / th)
    half = np.sin(th / 2.0)
    b = np.where(small, 0.5 - th2 / 24.0, 2.0 * half * half / (th * th))
    c = np.where(small, 1.0 / 6.0 - th2 / 120.0, (th - np.sin(th)) / (th * th * th))
    return a, b, c


def _log_coefficient(theta: np.ndarray) -> np.ndarray:
    # coefficient of W^2 in V^-1 = I - W/2 + c W^2
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    half = th / 2.0
    c = (1.0 - half * np.cos(half) / np.sin(half)) / (th * th)
    return np.where(small, 1.0 / 12.0 + theta * theta / 720.0, c)


def so3_exp_batch(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula for a stack of rotation vectors (N, 3) -> (N, 3, 3)."""
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(omega, axis=1)
    a, b, _ = _exp_coefficients(theta)
    w = hat(omega)
    return np.eye(3) + a[:, None, None] * w + b[:, None, None] * (w @ w)


def se3_exp_batch(xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exponential map for a stack of twists.

    Args:
        xi: Twists of shape (N, 6), [rotational, translational]

    Returns:
        Tuple of rotations (N, 3, 3) and translations (N, 3)
    """
    xi = np.asarray(xi, dtype=float).reshape(-1, 6)
    omega, v = xi[:, :3], xi[:, 3:]
    theta = np.linalg.norm(omega, axis=1)
    a, b, c = _exp_coefficients(theta)
    w = hat(omega)
    w2 = w @ w
    eye = np.eye(3)
    rot = eye + a[:, None, None] * w + b[:, None, None] * w2
    vmat = eye + b[:, None, None] * w + c[:, None, None] * w2
    return rot, np.einsum("nij,nj->ni", vmat, v)


def so3_log_batch(rot: np.ndarray) -> np.ndarray:
    """Rotation vectors of a stack of rotation matrices (N, 3, 3) -> (N, 3)."""
    rot = np.asarray(rot, dtype=float).reshape(-1, 3, 3)
    return Rotation.from_matrix(rot).as_rotvec()


def se3_log_batch(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """
    Logarithm map for a stack of rigid transforms. No singularity check.

    Args:
        rot: Rotations (N, 3, 3)
        trans: Translations (N, 3)

    Returns:
        Twists (N, 6)
    """
    rot = np.asarray(rot, dtype=float).reshape(-1, 3, 3)
    trans = np.asarray(trans, dtype=float).reshape(-1, 3)
    omega = so3_log_batch(rot)
    theta = np.linalg.norm(omega, axis=1)
    w = hat(omega)
    vinv = np.eye(3) - 0.5 * w + _log_coefficient(theta)[:, None, None] * (w @ w)
    return np.concatenate([omega, np.einsum("nij,nj->ni", vinv, trans)], axis=1)


def compose_batch(rot_a: np.ndarray, t_a: np.ndarray,
                  rot_b: np.ndarray, t_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked composition A * B for (N, 3, 3)/(N, 3) arrays (broadcasting allowed)."""
    rot = np.matmul(rot_a, rot_b)
    trans = np.einsum("...ij,...j->...i", rot_a, t_b) + t_a
    return rot, trans


def inverse_batch(rot: np.ndarray, trans: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rot_t = np.swapaxes(rot, -1, -2)
    return rot_t, -np.einsum("...ij,...j->...i", rot_t, trans)


def _canonical_quaternion(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError(f"invalid quaternion {q}")
    # already-unit input is kept bit-exact so stored poses read back unchanged
    if abs(norm - 1.0) > 1e-15:
        q = q / norm
    if q[0] < 0 or (q[0] == 0 and next((x for x in q[1:] if x != 0), 0) < 0):
        q = -q
    return q


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quaternion(rot: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(rot).as_quat()
    return _canonical_quaternion(np.array([w, x, y, z]))


class Se3Pose:
    """Immutable rigid transform stored as a scalar-first unit quaternion and a translation."""

    __slots__ = ("_q", "_t", "_R")

    def __init__(self, quaternion: Iterable[float] = (1.0, 0.0, 0.0, 0.0),
                 translation: Iterable[float] = (0.0, 0.0, 0.0)):
        q = _canonical_quaternion(np.array(quaternion, dtype=float).reshape(4))
        t = np.array(translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t}")
        rot = quaternion_to_matrix(q)
        for arr in (q, t, rot):
            arr.setflags(write=False)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_R", rot)

    def __setattr__(self, name, value):
        raise AttributeError("Se3Pose is immutable")

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls()

    @classmethod
    def from_rt(cls, rot: np.ndarray, trans: Iterable[float]) -> "Se3Pose":
        return cls(matrix_to_quaternion(np.asarray(rot, dtype=float)), trans)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "Se3Pose":
        mat = np.asarray(mat, dtype=float)
        return cls.from_rt(mat[:3, :3], mat[:3, 3])

    @property
    def quaternion(self) -> np.ndarray:
        return self._q

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @property
    def rotation(self) -> np.ndarray:
        return self._R

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self._R
        mat[:3, 3] = self._t
        return mat

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        q = np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ])
        return Se3Pose(q, self._R @ other._t + self._t)

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        return self.compose(other)

    def inverse(self) -> "Se3Pose":
        w, x, y, z = self._q
        return Se3Pose((w, -x, -y, -z), -(self._R.T @ self._t))

    def act(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self._R.T + self._t

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        return float(2.0 * np.arctan2(np.linalg.norm(self._q[1:]), abs(self._q[0])))

    def interpolate(self, other: "Se3Pose", alpha: float) -> "Se3Pose":
        """Log-linear interpolation: self * exp(alpha * log(self^-1 other))."""
        return self.compose(se3_exp(alpha * generalized_minus(other, self)))

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self._q)
        t = ", ".join(f"{v:.6g}" for v in self._t)
        return f"Se3Pose(q=[{q}], t=[{t}])"


def se3_exp(xi: Iterable[float]) -> Se3Pose:
    """
    Exponential map se(3) -> SE(3).

    Args:
        xi: Twist [rotational, translational]

    Returns:
        Se3Pose
    """
    rot, trans = se3_exp_batch(np.asarray(xi, dtype=float).reshape(1, 6))
    return Se3Pose.from_rt(rot[0], trans[0])


def se3_log(pose: Se3Pose) -> np.ndarray:
    """
    Logarithm map SE(3) -> se(3).

    Raises:
        IllConditionedLogError: rotation angle within 1e-9 of pi
    """
    if abs(pose.angle() - np.pi) <= LOG_SINGULARITY:
        raise IllConditionedLogError(f"log of a rotation at pi is ill-conditioned ({pose!r})")
    return se3_log_batch(pose.rotation[None], pose.translation[None])[0]


def generalized_minus(a: Se3Pose, b: Se3Pose) -> np.ndarray:
    """
    a (-) b = log(b^-1 a): the twist that maps b onto a by right multiplication.

    Args:
        a: Pose
        b: Reference pose

    Returns:
        Twist with b * exp(result) == a
    """
    return se3_log(b.inverse().compose(a))


def random_pose(rng: np.random.Generator, max_translation: float = 1.0,
                max_angle: Optional[float] = None) -> Se3Pose:
    """Random pose with uniformly distributed rotation (or bounded angle) and translation in a box."""
    trans = rng.uniform(-max_translation, max_translation, 3)
    if max_angle is None:
        return Se3Pose.from_rt(Rotation.random(random_state=rng).as_matrix(), trans)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Se3Pose.from_rt(so3_exp_batch(axis * rng.uniform(0, max_angle))[0], trans)


def poses_to_arrays(poses: Iterable[Se3Pose]) -> Tuple[np.ndarray, np.ndarray]:
    poses = list(poses)
    if not poses:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses])


def arrays_to_poses(rot: np.ndarray, trans: np.ndarray) -> list:
    if len(rot) == 0:
        return []
    quats = Rotation.from_matrix(rot).as_quat()
    return [Se3Pose((q[3], q[0], q[1], q[2]), t) for q, t in zip(quats, trans)]
