"""
Joint bundle adjustment with spline pose priors.

Minimizes  L = sum_ij rho(|e_proj_ij|^2) + w * sum_i |e_spline_i|^2  over image
poses, landmark positions and, when enabled, camera intrinsics and rig
rotations. Rig translations and splines are held fixed. Each schedule stage
runs Levenberg-Marquardt, then filters observations against the stage
threshold and retriangulates tracks left with fewer than two observations.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
import warnings

import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import ValidationError

from src.bundle.problem import BaProblem, Landmark
from src.bundle.residuals import camera_points, reprojection_errors, spline_residuals_batch
from src.bundle.robust import CauchyLoss, SquaredLoss
from src.bundle.triangulation import select_pairs, triangulate_robust, views_for
from src.errors import ConfigError, EmptyProblemError
from src.geometry.camera import MIN_DEPTH, project_with_params, projection_jacobians_params
from src.geometry.se3 import Se3Pose, compose_batch, hat, se3_exp_batch, so3_exp_batch
from src.logger import Logger
from src.optim.lm import levenberg_marquardt
from src.utils import format_markdown_table
from src.validator import BaConfig

JACOBIAN_STEP = 1e-6
DAMPING_FLOOR = 1e-9


class BaState(NamedTuple):
    rot: np.ndarray       # (I, 3, 3) R_WC
    trans: np.ndarray     # (I, 3) t_WC
    intrinsics: np.ndarray  # (C, 6)
    rig_rot: np.ndarray   # (C, 3, 3) R_BC
    points: np.ndarray    # (L, 3)


@dataclass
class StageReport:
    stage: int
    threshold: float
    iterations: int
    cost: float
    active: int
    mean_reproj: float
    deactivated: int
    reactivated: int
    retriangulated: int


@dataclass
class BaReport:
    initial_active: int = 0
    initial_mean_reproj: float = float("nan")
    initial_cost: float = float("nan")
    stages: List[StageReport] = field(default_factory=list)

    @property
    def final_mean_reproj(self) -> float:
        return self.stages[-1].mean_reproj if self.stages else self.initial_mean_reproj

    def to_frame(self) -> pd.DataFrame:
        rows = [{"stage": 0, "threshold": float("nan"), "iterations": 0, "cost": self.initial_cost,
                 "active": self.initial_active, "mean_reproj": self.initial_mean_reproj,
                 "deactivated": 0, "reactivated": 0, "retriangulated": 0}]
        rows += [vars(s) for s in self.stages]
        return pd.DataFrame(rows)

    def to_text(self) -> str:
        return format_markdown_table(self.to_frame())


class BaObjective:
    """
    The joint cost over a fixed set of usable observations, with its
    IRLS-weighted linearization and the parameter layout
    [free image poses | intrinsics | rig rotations | landmarks].
    """

    def __init__(self, problem: BaProblem, usable: np.ndarray, robust: bool = True):
        self.problem = problem
        self.loss = CauchyLoss(problem.cauchy_scale) if robust else SquaredLoss()
        self.image_ids = list(problem.images)
        image_index = {image_id: i for i, image_id in enumerate(self.image_ids)}
        self.camera_ids = list(problem.intrinsics)
        camera_index = {camera_id: c for c, camera_id in enumerate(self.camera_ids)}
        images = [problem.images[i] for i in self.image_ids]
        self.image_camera = np.array([camera_index[im.camera_id] for im in images], dtype=np.int64)

        free = np.array([im.optimize_pose for im in images], dtype=bool)
        self.pose_col = np.full(len(images), -1, dtype=np.int64)
        self.pose_col[free] = 6 * np.arange(int(free.sum()))
        col = 6 * int(free.sum())
        n_cam = len(self.camera_ids)
        self.intr_col = None
        if problem.optimize_intrinsics:
            self.intr_col = col + 6 * np.arange(n_cam)
            col += 6 * n_cam
        self.rig_col = None
        if problem.optimize_rig_rotation:
            self.rig_col = col + 3 * np.arange(n_cam)
            col += 3 * n_cam
        self.n_camera_side = col

        self.obs_index = np.flatnonzero(usable)
        observations = [problem.observations[k] for k in self.obs_index]
        seen: Dict[str, None] = {}
        for obs in observations:
            seen.setdefault(obs.landmark_id, None)
        self.landmark_ids = list(seen)
        landmark_index = {landmark_id: j for j, landmark_id in enumerate(self.landmark_ids)}
        self.o_img = np.array([image_index[o.image_id] for o in observations], dtype=np.int64)
        self.o_cam = self.image_camera[self.o_img] if len(observations) else np.zeros(0, dtype=np.int64)
        self.o_lm = np.array([landmark_index[o.landmark_id] for o in observations], dtype=np.int64)
        self.o_pix = np.array([o.pixel for o in observations]).reshape(-1, 2)
        self.lm_col = col + 3 * np.arange(len(self.landmark_ids))
        self.n_params = col + 3 * len(self.landmark_ids)

        prior_img, prior_r, prior_t = [], [], []
        if problem.prior_weight > 0:
            by_sequence: Dict[str, List[int]] = {}
            for i, image in enumerate(images):
                spline = problem.splines.get(image.sequence_id)
                if spline is not None and bool(spline.contains(image.stamp_ns)):
                    by_sequence.setdefault(image.sequence_id, []).append(i)
            for sequence_id, members in by_sequence.items():
                rot, trans = problem.splines[sequence_id].evaluate_batch([images[i].stamp_ns for i in members])
                prior_img.extend(members)
                prior_r.append(rot)
                prior_t.append(trans)
        self.p_img = np.array(prior_img, dtype=np.int64)
        self.p_cam = self.image_camera[self.p_img] if len(prior_img) else np.zeros(0, dtype=np.int64)
        self.prior_r = np.concatenate(prior_r) if prior_r else np.zeros((0, 3, 3))
        self.prior_t = np.concatenate(prior_t) if prior_t else np.zeros((0, 3))
        self.rig_t = np.stack([problem.rig[c].pose.translation for c in self.camera_ids]) \
            if self.camera_ids else np.zeros((0, 3))
        self.sqrt_w = np.sqrt(problem.prior_weight)

    @property
    def has_terms(self) -> bool:
        return len(self.obs_index) > 0 or len(self.p_img) > 0

    def initial_state(self) -> BaState:
        images = [self.problem.images[i] for i in self.image_ids]
        rot = np.stack([im.pose.rotation for im in images]) if images else np.zeros((0, 3, 3))
        trans = np.stack([im.pose.translation for im in images]) if images else np.zeros((0, 3))
        intr = np.stack([self.problem.intrinsics[c].params() for c in self.camera_ids]) \
            if self.camera_ids else np.zeros((0, 6))
        rig_rot = np.stack([self.problem.rig[c].pose.rotation for c in self.camera_ids]) \
            if self.camera_ids else np.zeros((0, 3, 3))
        points = np.stack([self.problem.landmarks[j].position for j in self.landmark_ids]) \
            if self.landmark_ids else np.zeros((0, 3))
        return BaState(rot.copy(), trans.copy(), intr.copy(), rig_rot.copy(), points.copy())

    def _projection(self, x: BaState):
        rot = x.rot[self.o_img]
        p_cam = camera_points(rot, x.trans[self.o_img], x.points[self.o_lm])
        return rot, p_cam

    def _prior(self, rot, trans, rig_rot) -> np.ndarray:
        return spline_residuals_batch(self.prior_r, self.prior_t, rig_rot[self.p_cam], self.rig_t[self.p_cam],
                                      rot[self.p_img], trans[self.p_img])

    def cost(self, x: BaState) -> float:
        total = 0.0
        if len(self.o_img):
            _, p_cam = self._projection(x)
            if np.any(p_cam[:, 2] <= MIN_DEPTH):
                return float("inf")
            e = self.o_pix - project_with_params(x.intrinsics[self.o_cam], p_cam)
            total += float(np.sum(self.loss.rho(np.sum(e * e, axis=1))))
        if len(self.p_img):
            e = self._prior(x.rot, x.trans, x.rig_rot)
            total += self.problem.prior_weight * float(np.sum(e * e))
        return total

    def retract(self, x: BaState, dx: np.ndarray) -> BaState:
        free = self.pose_col >= 0
        rot, trans = x.rot.copy(), x.trans.copy()
        if np.any(free):
            steps = dx[self.pose_col[free][:, None] + np.arange(6)]
            step_r, step_t = se3_exp_batch(steps)
            rot[free], trans[free] = compose_batch(x.rot[free], x.trans[free], step_r, step_t)
        intr = x.intrinsics
        if self.intr_col is not None:
            intr = intr + dx[self.intr_col[:, None] + np.arange(6)]
        rig_rot = x.rig_rot
        if self.rig_col is not None:
            rig_rot = rig_rot @ so3_exp_batch(dx[self.rig_col[:, None] + np.arange(3)])
        points = x.points
        if len(self.lm_col):
            points = points + dx[self.lm_col[:, None] + np.arange(3)]
        return BaState(rot, trans, intr, rig_rot, points)

    def linearize(self, x: BaState) -> Tuple[np.ndarray, sp.csr_matrix]:
        rows, cols, vals = [], [], []

        def add(row0: np.ndarray, col0: np.ndarray, block: np.ndarray) -> None:
            keep = col0 >= 0
            if not np.any(keep):
                return
            for a in range(block.shape[1]):
                for b in range(block.shape[2]):
                    rows.append(row0[keep] + a)
                    cols.append(col0[keep] + b)
                    vals.append(block[keep, a, b])

        m = len(self.o_img)
        residual_parts = []
        if m:
            rot, p_cam = self._projection(x)
            params = x.intrinsics[self.o_cam]
            e = self.o_pix - project_with_params(params, p_cam)
            sw = np.sqrt(self.loss.weight(np.sum(e * e, axis=1)))
            residual_parts.append((sw[:, None] * e).ravel())
            j_point, j_intr = projection_jacobians_params(params, p_cam)
            j_point = -sw[:, None, None] * j_point
            d_pose = np.concatenate([hat(p_cam), np.broadcast_to(-np.eye(3), (m, 3, 3))], axis=2)
            row0 = 2 * np.arange(m)
            add(row0, self.pose_col[self.o_img], j_point @ d_pose)
            add(row0, self.lm_col[self.o_lm], j_point @ np.swapaxes(rot, 1, 2))
            if self.intr_col is not None:
                add(row0, self.intr_col[self.o_cam], -sw[:, None, None] * j_intr)

        n_prior = len(self.p_img)
        if n_prior:
            base_rows = 2 * m + 6 * np.arange(n_prior)
            residual_parts.append((self.sqrt_w * self._prior(x.rot, x.trans, x.rig_rot)).ravel())
            rot_i, trans_i = x.rot[self.p_img], x.trans[self.p_img]
            rig_i = x.rig_rot[self.p_cam]
            pose_jac = np.zeros((n_prior, 6, 6))
            for d in range(6):
                delta = np.zeros((n_prior, 6))
                delta[:, d] = JACOBIAN_STEP
                diffs = []
                for sign in (1.0, -1.0):
                    step_r, step_t = se3_exp_batch(sign * delta)
                    moved_r, moved_t = compose_batch(rot_i, trans_i, step_r, step_t)
                    diffs.append(spline_residuals_batch(self.prior_r, self.prior_t, rig_i, self.rig_t[self.p_cam],
                                                        moved_r, moved_t))
                pose_jac[:, :, d] = (diffs[0] - diffs[1]) / (2.0 * JACOBIAN_STEP)
            add(base_rows, self.pose_col[self.p_img], self.sqrt_w * pose_jac)
            if self.rig_col is not None:
                rig_jac = np.zeros((n_prior, 6, 3))
                for d in range(3):
                    delta = np.zeros((n_prior, 3))
                    delta[:, d] = JACOBIAN_STEP
                    diffs = []
                    for sign in (1.0, -1.0):
                        moved = rig_i @ so3_exp_batch(sign * delta)
                        diffs.append(spline_residuals_batch(self.prior_r, self.prior_t, moved, self.rig_t[self.p_cam],
                                                            rot_i, trans_i))
                    rig_jac[:, :, d] = (diffs[0] - diffs[1]) / (2.0 * JACOBIAN_STEP)
                add(base_rows, self.rig_col[self.p_cam], self.sqrt_w * rig_jac)

        r = np.concatenate(residual_parts) if residual_parts else np.zeros(0)
        if rows:
            jac = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(len(r), self.n_params))
        else:
            jac = sp.csr_matrix((len(r), self.n_params))
        return r, jac

    def gradient(self, x: BaState) -> np.ndarray:
        """dL/dx = 2 J_w^T r_w."""
        r, jac = self.linearize(x)
        return 2.0 * (jac.T @ r)

    def apply(self, x: BaState) -> BaProblem:
        """Write a state back into a new BaProblem; untouched blocks keep their objects."""
        problem = self.problem
        images = dict(problem.images)
        for i, image_id in enumerate(self.image_ids):
            if self.pose_col[i] >= 0:
                images[image_id] = replace(images[image_id], pose=Se3Pose.from_rt(x.rot[i], x.trans[i]))
        intrinsics = problem.intrinsics
        if self.intr_col is not None:
            intrinsics = {c: problem.intrinsics[c].with_params(x.intrinsics[k]) for k, c in enumerate(self.camera_ids)}
        rig = problem.rig
        if self.rig_col is not None:
            rig = {c: problem.rig[c].with_rotation(x.rig_rot[k]) for k, c in enumerate(self.camera_ids)}
        landmarks = dict(problem.landmarks)
        for j, landmark_id in enumerate(self.landmark_ids):
            landmarks[landmark_id] = Landmark(landmark_id, x.points[j], True)
        return replace(problem, images=images, intrinsics=intrinsics, rig=rig, landmarks=landmarks)


def _damped_blocks(hessian: sp.csr_matrix, lam: float) -> Tuple[sp.csr_matrix, np.ndarray]:
    diag = np.maximum(hessian.diagonal(), DAMPING_FLOOR)
    return (hessian + sp.diags(lam * diag)).tocsr(), diag


def schur_solve(jac: sp.csr_matrix, r: np.ndarray, lam: float, n_camera_side: int) -> np.ndarray:
    """
    Damped Gauss-Newton step by eliminating the 3x3 landmark blocks.
    """
    hessian = (jac.T @ jac).tocsr()
    gradient = jac.T @ r
    damped, _ = _damped_blocks(hessian, lam)
    n_c = n_camera_side
    n_l = (hessian.shape[0] - n_c) // 3
    g_c, g_l = gradient[:n_c], gradient[n_c:]
    h_cc = damped[:n_c, :n_c]
    h_cl = damped[:n_c, n_c:]
    coo = damped[n_c:, n_c:].tocoo()
    blocks = np.zeros((n_l, 3, 3))
    same = (coo.row // 3) == (coo.col // 3)
    np.add.at(blocks, (coo.row[same] // 3, coo.row[same] % 3, coo.col[same] % 3), coo.data[same])
    try:
        inverse = np.linalg.inv(blocks)
    except np.linalg.LinAlgError:
        return np.full(hessian.shape[0], np.nan)
    h_ll_inv = sp.bsr_matrix((inverse, np.arange(n_l), np.arange(n_l + 1)), shape=(3 * n_l, 3 * n_l)).tocsr()
    if n_c:
        schur = (h_cc - h_cl @ h_ll_inv @ h_cl.T).tocsc()
        rhs = -g_c + h_cl @ (h_ll_inv @ g_l)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                d_c = np.atleast_1d(spla.spsolve(schur, rhs))
            except (RuntimeError, ValueError):
                return np.full(hessian.shape[0], np.nan)
    else:
        d_c = np.zeros(0)
    d_l = h_ll_inv @ (-g_l - h_cl.T @ d_c) if n_l else np.zeros(0)
    return np.concatenate([d_c, d_l])


def dense_solve(jac: sp.csr_matrix, r: np.ndarray, lam: float) -> np.ndarray:
    hessian = (jac.T @ jac).toarray()
    diag = np.maximum(np.diag(hessian), DAMPING_FLOOR)
    try:
        return np.linalg.solve(hessian + np.diag(lam * diag), -(jac.T @ r))
    except np.linalg.LinAlgError:
        return np.full(len(diag), np.nan)


def _observation_errors(problem: BaProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Reprojection error norm and in-front flag per observation (NaN/False for untriangulated tracks)."""
    n = len(problem.observations)
    errors = np.full(n, np.nan)
    front = np.zeros(n, dtype=bool)
    by_camera: Dict[str, List[int]] = {}
    for k, obs in enumerate(problem.observations):
        if problem.landmarks[obs.landmark_id].triangulated:
            by_camera.setdefault(problem.images[obs.image_id].camera_id, []).append(k)
    for camera_id, members in by_camera.items():
        obs = [problem.observations[k] for k in members]
        poses = [problem.images[o.image_id].pose for o in obs]
        residual, ok = reprojection_errors(
            np.array([o.pixel for o in obs]), problem.intrinsics[camera_id],
            np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]),
            np.stack([problem.landmarks[o.landmark_id].position for o in obs]))
        errors[members] = np.linalg.norm(residual, axis=1)
        front[members] = ok
    return errors, front


def active_reprojection_errors(problem: BaProblem) -> np.ndarray:
    """Reprojection error norms (px) of the active observations in front of their camera."""
    errors, front = _observation_errors(problem)
    active = np.array([o.active for o in problem.observations], dtype=bool) & front
    return errors[active]


def mean_reprojection(problem: BaProblem) -> float:
    errors = active_reprojection_errors(problem)
    return float(np.mean(errors)) if errors.size else float("nan")


def _usable(problem: BaProblem) -> np.ndarray:
    lengths = problem.track_lengths()
    return np.array([o.active and problem.landmarks[o.landmark_id].triangulated and lengths[o.landmark_id] >= 2
                     for o in problem.observations], dtype=bool)


def _set_active(problem: BaProblem, active: np.ndarray) -> BaProblem:
    observations = [o if o.active == bool(a) else replace(o, active=bool(a))
                    for o, a in zip(problem.observations, active)]
    return replace(problem, observations=observations)


def triangulate_tracks(problem: BaProblem, threshold: float, config: BaConfig,
                       only: Optional[Sequence[str]] = None) -> Tuple[BaProblem, int]:
    """
    Robustly triangulate tracks (all of them, or the given landmark ids) from
    the current image poses, activating observations within the threshold.

    Returns:
        Tuple of (updated problem, number of triangulated tracks)
    """
    pairs = set(select_pairs(problem.images.values(), config.pair_max_dist, config.pair_max_angle))
    tracks: Dict[str, List[int]] = {}
    for k, obs in enumerate(problem.observations):
        tracks.setdefault(obs.landmark_id, []).append(k)
    targets = list(tracks) if only is None else [t for t in only if t in tracks]
    active = np.array([o.active for o in problem.observations], dtype=bool)
    landmarks = dict(problem.landmarks)
    succeeded = 0
    for landmark_id in targets:
        members = tracks[landmark_id]
        obs = [problem.observations[k] for k in members]
        images = [problem.images[o.image_id] for o in obs]
        views = views_for(np.array([o.pixel for o in obs]), images, problem.intrinsics)
        result = triangulate_robust(views, [o.image_id for o in obs], config.tri_min_angle, threshold, pairs)
        if result.ok:
            landmarks[landmark_id] = Landmark(landmark_id, result.position, True)
            active[members] = result.inliers
            succeeded += 1
        else:
            active[members] = False
    return _set_active(replace(problem, landmarks=landmarks), active), succeeded


def _filter(problem: BaProblem, threshold: float, config: BaConfig) -> Tuple[BaProblem, int, int, int]:
    errors, front = _observation_errors(problem)
    before = np.array([o.active for o in problem.observations], dtype=bool)
    triangulated = np.array([problem.landmarks[o.landmark_id].triangulated for o in problem.observations], dtype=bool)
    within = triangulated & front & (errors <= threshold)
    active = within.copy()
    deactivated = int(np.sum(before & ~within))
    reactivated = int(np.sum(~before & within))
    problem = _set_active(problem, active)

    lengths = problem.track_lengths()
    short = [landmark_id for landmark_id, n in lengths.items() if n < 2]
    retriangulated = 0
    if short:
        problem, retriangulated = triangulate_tracks(problem, threshold, config, short)
    return problem, deactivated, reactivated, retriangulated


def _linear_solver(objective: BaObjective, config: BaConfig):
    mode = config.linear_solver
    if mode == "auto":
        mode = "dense" if objective.n_params < config.dense_below else "schur"
    if mode == "dense":
        return dense_solve
    return lambda jac, r, lam: schur_solve(jac, r, lam, objective.n_camera_side)


def solve_ba(
    problem: BaProblem,
    schedule: Optional[Sequence[Tuple[float, int]]] = None,
    config: Optional[BaConfig] = None,
    logger: Optional[Logger] = None,
) -> Tuple[BaProblem, BaReport]:
    """
    Run the outlier schedule of bundle adjustment.

    Args:
        problem: Problem with image poses, triangulated landmarks and activity flags
        schedule: (threshold px, LM iterations) stages with strictly decreasing thresholds;
            defaults to config.schedule
        config: Solver configuration (loss, linear solver, triangulation thresholds)
        logger: Optional logger

    Returns:
        Tuple of (optimized problem, per-stage report)

    Raises:
        EmptyProblemError: no usable observation and no spline prior
        NormalEquationError: the damped normal equations could not be solved
    """
    config = config or BaConfig()
    stages = list(schedule) if schedule is not None else list(config.schedule)
    try:
        BaConfig(schedule=stages)
    except ValidationError as e:
        raise ConfigError(f"invalid bundle adjustment schedule {stages}: {e.errors()[0]['msg']}", key="ba_schedule") from e
    problem.validate()

    report = BaReport(initial_active=problem.active_count(), initial_mean_reproj=mean_reprojection(problem))
    for number, (threshold, iterations) in enumerate(stages, start=1):
        # points that fell behind their camera cannot be linearized
        errors, front = _observation_errors(problem)
        active = np.array([o.active for o in problem.observations], dtype=bool)
        problem = _set_active(problem, active & (front | np.isnan(errors)))

        objective = BaObjective(problem, _usable(problem), robust=config.robust)
        if not objective.has_terms:
            raise EmptyProblemError("bundle adjustment has no active observation and no spline prior")
        x0 = objective.initial_state()
        if number == 1:
            report.initial_cost = objective.cost(x0)
        result = levenberg_marquardt(objective, x0, max_iter=iterations, cost_floor=1e-30,
                                     solve=_linear_solver(objective, config), logger=logger,
                                     label=f"ba stage {number}")
        problem = objective.apply(result.x) if len(result.history) > 1 else problem
        problem, deactivated, reactivated, retriangulated = _filter(problem, threshold, config)
        stage = StageReport(number, float(threshold), result.iterations, result.cost, problem.active_count(),
                            mean_reprojection(problem), deactivated, reactivated, retriangulated)
        report.stages.append(stage)
        if logger is not None:
            logger.add_log(f"ba stage {number} ({threshold:g} px): cost {stage.cost:.6e}, active {stage.active}, "
                           f"mean reprojection {stage.mean_reproj:.4f} px, -{deactivated} +{reactivated} "
                           f"observations, {retriangulated} track(s) retriangulated")
    return problem, report


def map_statistics(problem: BaProblem) -> Dict[str, float]:
    """Images, reconstructed points, mean active observations per image and mean reprojection error."""
    lengths = problem.track_lengths()
    points = sum(1 for landmark_id, n in lengths.items() if n >= 2 and problem.landmarks[landmark_id].triangulated)
    active = problem.active_count()
    n_images = len(problem.images)
    return {
        "images": n_images,
        "points": points,
        "observations": active,
        "observations_per_image": active / n_images if n_images else 0.0,
        "mean_reprojection_px": mean_reprojection(problem),
    }
