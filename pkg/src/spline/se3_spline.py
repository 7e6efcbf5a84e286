"""
Cumulative cubic B-spline on SE(3) with uniform knots.

For n control poses T_0..T_{n-1}, knot spacing dt and origin t0, segment i
covers [t0 + (i+1) dt, t0 + (i+2) dt) and uses controls i..i+3:

    T(t) = T_i * exp(B1(u) W_{i+1}) * exp(B2(u) W_{i+2}) * exp(B3(u) W_{i+3})

with W_j = log(T_{j-1}^-1 T_j) and the cumulative basis
    B1 = (5 + 3u - 3u^2 + u^3) / 6,  B2 = (1 + 3u + 3u^2 - 2u^3) / 6,  B3 = u^3 / 6.
"""

from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.errors import InsufficientSamplesError, NonMonotonicTimestampsError, OutOfDomainError
from src.geometry.se3 import (
    Se3Pose, arrays_to_poses, compose_batch, inverse_batch, poses_to_arrays,
    se3_exp_batch, se3_log_batch,
)
from src.logger import Logger
from src.optim.lm import levenberg_marquardt


def cumulative_basis(u: np.ndarray) -> np.ndarray:
    """Cumulative basis values (N, 3) for normalized segment times u in [0, 1)."""
    u = np.asarray(u, dtype=float)
    u2 = u * u
    u3 = u2 * u
    return np.stack([(5.0 + 3.0 * u - 3.0 * u2 + u3) / 6.0,
                     (1.0 + 3.0 * u + 3.0 * u2 - 2.0 * u3) / 6.0,
                     u3 / 6.0], axis=-1)


def _increments(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """W_j for j = 1..n-1 as an (n-1, 6) array; identical neighbours give an exact zero."""
    inv_r, inv_t = inverse_batch(rot[:-1], trans[:-1])
    rel_r, rel_t = compose_batch(inv_r, inv_t, rot[1:], trans[1:])
    omega = se3_log_batch(rel_r, rel_t)
    same = (np.all(rot[:-1] == rot[1:], axis=(1, 2)) & np.all(trans[:-1] == trans[1:], axis=1))
    omega[same] = 0.0
    return omega


def _evaluate_arrays(rot: np.ndarray, trans: np.ndarray, segment: np.ndarray,
                     u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    omega = _increments(rot, trans)
    basis = cumulative_basis(u)
    out_r, out_t = rot[segment], trans[segment]
    for k in range(3):
        # W_{i+k+1} is stored at index i+k
        step_r, step_t = se3_exp_batch(basis[:, k:k + 1] * omega[segment + k])
        out_r, out_t = compose_batch(out_r, out_t, step_r, step_t)
    return out_r, out_t


class Se3Spline:
    """Immutable uniform cumulative cubic B-spline. Times are integer nanoseconds."""

    def __init__(self, t0: int, dt: int, control_poses: Sequence[Se3Pose]):
        if len(control_poses) < 4:
            raise InsufficientSamplesError(f"a cubic spline needs at least 4 control poses, got {len(control_poses)}")
        if int(dt) <= 0:
            raise ValueError("knot spacing must be positive")
        self._t0 = int(t0)
        self._dt = int(dt)
        self._poses = list(control_poses)
        self._rot, self._trans = poses_to_arrays(self._poses)
        self._rot.setflags(write=False)
        self._trans.setflags(write=False)

    @property
    def t0(self) -> int:
        return self._t0

    @property
    def dt(self) -> int:
        return self._dt

    @property
    def control_poses(self) -> List[Se3Pose]:
        return list(self._poses)

    @property
    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._rot, self._trans

    def __len__(self) -> int:
        return len(self._poses)

    @property
    def domain(self) -> Tuple[int, int]:
        """Half-open valid interval [t0 + dt, t0 + (n - 2) dt)."""
        return self._t0 + self._dt, self._t0 + (len(self._poses) - 2) * self._dt

    def contains(self, t) -> np.ndarray:
        lo, hi = self.domain
        t = np.asarray(t, dtype=np.int64)
        return (t >= lo) & (t < hi)

    def locate(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Segment index and normalized time u for each timestamp; raises outside the domain."""
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        inside = self.contains(t)
        if not np.all(inside):
            bad = int(t[~inside][0])
            raise OutOfDomainError(f"timestamp {bad} ns is outside the spline domain", self.domain)
        offset = t - self._t0
        k = offset // self._dt
        u = (offset - k * self._dt).astype(float) / self._dt
        return (k - 1).astype(np.int64), u

    def evaluate_batch(self, t) -> Tuple[np.ndarray, np.ndarray]:
        segment, u = self.locate(t)
        return _evaluate_arrays(self._rot, self._trans, segment, u)

    def evaluate(self, t: int) -> Se3Pose:
        rot, trans = self.evaluate_batch([t])
        return Se3Pose.from_rt(rot[0], trans[0])

    def with_controls(self, control_poses: Sequence[Se3Pose]) -> "Se3Spline":
        return Se3Spline(self._t0, self._dt, control_poses)


def spline_evaluate(s: Se3Spline, t: int) -> Se3Pose:
    """
    Evaluate the spline at a timestamp.

    Raises:
        OutOfDomainError: t outside [t0 + dt, t0 + (n - 2) dt)
    """
    return s.evaluate(t)


class SplineFit(NamedTuple):
    spline: Se3Spline
    rms: float
    iterations: int


class _SplineFitProblem:
    """Residuals log(pose_k^-1 T(t_k)) over right perturbations of the control poses."""

    def __init__(self, segment: np.ndarray, u: np.ndarray, target_r: np.ndarray,
                 target_t: np.ndarray, n_controls: int, step: float):
        self.segment = segment
        self.u = u
        self.inv_r, self.inv_t = inverse_batch(target_r, target_t)
        self.n = n_controls
        self.step = step

    def residuals(self, x: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        rot, trans = _evaluate_arrays(x[0], x[1], self.segment, self.u)
        rel_r, rel_t = compose_batch(self.inv_r, self.inv_t, rot, trans)
        return se3_log_batch(rel_r, rel_t)

    def cost(self, x) -> float:
        return float(np.sum(self.residuals(x) ** 2))

    def retract(self, x, dx: np.ndarray):
        step_r, step_t = se3_exp_batch(dx.reshape(-1, 6))
        return compose_batch(x[0], x[1], step_r, step_t)

    def linearize(self, x):
        r0 = self.residuals(x)
        m = len(self.segment)
        rows, cols, vals = [], [], []
        sample_rows = np.arange(m)
        # each sample touches exactly one control of every residue class mod 4
        for group in range(4):
            owner = self.segment + (group - self.segment) % 4
            members = np.arange(group, self.n, 4)
            for d in range(6):
                delta = np.zeros((self.n, 6))
                delta[members, d] = self.step
                plus = self.residuals(self.retract(x, delta.ravel()))
                minus = self.residuals(self.retract(x, -delta.ravel()))
                deriv = (plus - minus) / (2.0 * self.step)
                for out in range(6):
                    rows.append(6 * sample_rows + out)
                    cols.append(6 * owner + d)
                    vals.append(deriv[:, out])
        jac = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(6 * m, 6 * self.n))
        return r0.ravel(), jac


def spline_fit(
    poses: Sequence[Tuple[int, Se3Pose]],
    dt: int,
    max_iter: int = 50,
    jacobian_step: float = 1e-6,
    logger: Optional[Logger] = None,
) -> SplineFit:
    """
    Least-squares fit of a uniform spline to timestamped poses.

    Args:
        poses: (timestamp ns, pose) samples, strictly increasing in time
        dt: Knot spacing (ns)
        max_iter: Levenberg-Marquardt iteration budget
        jacobian_step: Central-difference step
        logger: Optional logger

    Returns:
        SplineFit with the spline, the residual RMS over all 6 twist components and the iteration count
    """
    if len(poses) < 4:
        raise InsufficientSamplesError(f"spline fit needs at least 4 samples, got {len(poses)}")
    times = np.array([int(t) for t, _ in poses], dtype=np.int64)
    if np.any(np.diff(times) <= 0):
        index = int(np.argmax(np.diff(times) <= 0)) + 1
        raise NonMonotonicTimestampsError(f"sample {index} has timestamp {times[index]} not after {times[index - 1]}")
    dt = int(dt)
    if times[-1] - times[0] < 3 * dt:
        raise InsufficientSamplesError(f"samples span {times[-1] - times[0]} ns, need at least 3 * dt = {3 * dt} ns")

    t0 = int(times[0]) - dt
    n = int((times[-1] - t0) // dt) + 3
    target_r, target_t = poses_to_arrays([p for _, p in poses])

    # seed control j from the sample nearest to t0 + j * dt
    anchors = t0 + np.arange(n, dtype=np.int64) * dt
    nearest = np.clip(np.searchsorted(times, anchors), 1, len(times) - 1)
    left_closer = (anchors - times[nearest - 1]) <= (times[nearest] - anchors)
    nearest = np.where(left_closer, nearest - 1, nearest)
    x0 = (target_r[nearest].copy(), target_t[nearest].copy())

    seed = Se3Spline(t0, dt, arrays_to_poses(*x0))
    segment, u = seed.locate(times)
    problem = _SplineFitProblem(segment, u, target_r, target_t, n, jacobian_step)
    result = levenberg_marquardt(problem, x0, max_iter=max_iter, cost_floor=1e-30,
                                 logger=logger, label="spline_fit")
    spline = Se3Spline(t0, dt, arrays_to_poses(*result.x))
    rms = float(np.sqrt(result.cost / (6 * len(times))))
    if logger is not None:
        logger.add_log(f"spline_fit: {n} control poses over {len(times)} samples, rms {rms:.3e}")
    return SplineFit(spline, rms, result.iterations)
