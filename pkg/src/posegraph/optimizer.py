"""
Pose-graph optimization by Levenberg-Marquardt on sparse normal equations.

Edge residual: r = log((T_from * rel)^-1 T_to), zero iff T_to = T_from * rel,
weighted by L^T where information = L L^T. Nodes move by right
perturbations T <- T exp(d); gauge-fixed nodes are not parameters.
"""

from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from src.geometry.se3 import (
    Se3Pose, arrays_to_poses, compose_batch, inverse_batch, poses_to_arrays,
    se3_exp_batch, se3_log_batch,
)
from src.logger import Logger
from src.optim.lm import levenberg_marquardt
from src.posegraph.graph import PoseGraph, check_information

JACOBIAN_STEP = 1e-6


def edge_residuals(rot_from, t_from, rot_to, t_to, rot_rel, t_rel) -> np.ndarray:
    """Unweighted residuals (E, 6) for stacked edges."""
    pred_r, pred_t = compose_batch(rot_from, t_from, rot_rel, t_rel)
    inv_r, inv_t = inverse_batch(pred_r, pred_t)
    err_r, err_t = compose_batch(inv_r, inv_t, rot_to, t_to)
    return se3_log_batch(err_r, err_t)


def edge_residual(pose_from: Se3Pose, pose_to: Se3Pose, relative: Se3Pose) -> np.ndarray:
    """Residual of a single edge, pose_to (-) (pose_from * relative)."""
    return edge_residuals(pose_from.rotation[None], pose_from.translation[None],
                          pose_to.rotation[None], pose_to.translation[None],
                          relative.rotation[None], relative.translation[None])[0]


class _PoseGraphProblem:
    def __init__(self, graph: PoseGraph):
        ids = list(graph.nodes)
        index = {node_id: i for i, node_id in enumerate(ids)}
        self.n = len(ids)
        free = [node_id for node_id in ids if node_id not in graph.fixed]
        self.column = np.full(self.n, -1, dtype=np.int64)
        self.column[[index[i] for i in free]] = np.arange(len(free))
        self.n_free = len(free)
        self.src = np.array([index[e.from_id] for e in graph.edges], dtype=np.int64)
        self.dst = np.array([index[e.to_id] for e in graph.edges], dtype=np.int64)
        rel = [e.relative for e in graph.edges]
        self.rel_r, self.rel_t = poses_to_arrays(rel)
        self.sqrt_info = np.stack([check_information(e.information).T for e in graph.edges]) \
            if graph.edges else np.zeros((0, 6, 6))

    def _weighted(self, rot_from, t_from, rot_to, t_to) -> np.ndarray:
        raw = edge_residuals(rot_from, t_from, rot_to, t_to, self.rel_r, self.rel_t)
        return np.einsum("eij,ej->ei", self.sqrt_info, raw)

    def residuals(self, x) -> np.ndarray:
        rot, trans = x
        return self._weighted(rot[self.src], trans[self.src], rot[self.dst], trans[self.dst])

    def cost(self, x) -> float:
        return float(np.sum(self.residuals(x) ** 2))

    def retract(self, x, dx: np.ndarray):
        rot, trans = x
        full = np.zeros((self.n, 6))
        mask = self.column >= 0
        full[mask] = dx.reshape(-1, 6)[self.column[mask]]
        step_r, step_t = se3_exp_batch(full)
        return compose_batch(rot, trans, step_r, step_t)

    def linearize(self, x):
        rot, trans = x
        ends = [(rot[self.src], trans[self.src]), (rot[self.dst], trans[self.dst])]
        r0 = self._weighted(*ends[0], *ends[1])
        n_edges = len(self.src)
        rows, cols, vals = [], [], []
        edge_rows = 6 * np.arange(n_edges)
        for side, nodes in enumerate((self.src, self.dst)):
            active = self.column[nodes] >= 0
            if not np.any(active):
                continue
            base_r, base_t = ends[side]
            for d in range(6):
                delta = np.zeros((n_edges, 6))
                delta[:, d] = JACOBIAN_STEP
                derivs = []
                for sign in (1.0, -1.0):
                    step_r, step_t = se3_exp_batch(sign * delta)
                    moved = compose_batch(base_r, base_t, step_r, step_t)
                    pair = (moved, ends[1]) if side == 0 else (ends[0], moved)
                    derivs.append(self._weighted(*pair[0], *pair[1]))
                deriv = (derivs[0] - derivs[1]) / (2.0 * JACOBIAN_STEP)
                for out in range(6):
                    rows.append(edge_rows[active] + out)
                    cols.append(6 * self.column[nodes[active]] + d)
                    vals.append(deriv[active, out])
        if rows:
            jac = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(6 * n_edges, 6 * self.n_free))
        else:
            jac = sp.csr_matrix((6 * n_edges, 6 * self.n_free))
        return r0.ravel(), jac


def graph_cost(graph: PoseGraph) -> float:
    """Sum over edges of r^T info r."""
    if not graph.edges:
        return 0.0
    problem = _PoseGraphProblem(graph)
    return problem.cost(poses_to_arrays(n.pose for n in graph.nodes.values()))


def optimize(graph: PoseGraph, max_iter: int = 50,
             logger: Optional[Logger] = None) -> Tuple[PoseGraph, float]:
    """
    Optimize node poses of a connected, gauge-fixed graph.

    Args:
        graph: Pose graph
        max_iter: Levenberg-Marquardt iteration budget
        logger: Optional logger

    Returns:
        Tuple of (graph with updated poses, final cost)

    Raises:
        NoFixedNodeError, DisconnectedGraphError, NonSpdInformationError
    """
    graph.validate()
    problem = _PoseGraphProblem(graph)
    x0 = poses_to_arrays(n.pose for n in graph.nodes.values())
    if problem.n_free == 0 or not graph.edges:
        return graph.copy(), problem.cost(x0) if graph.edges else 0.0
    result = levenberg_marquardt(problem, x0, max_iter=max_iter, cost_floor=1e-24,
                                 logger=logger, label="pose_graph")
    if len(result.history) == 1:
        return graph.copy(), result.cost
    poses = arrays_to_poses(*result.x)
    updated = {node_id: pose for node_id, pose in zip(graph.nodes, poses) if node_id not in graph.fixed}
    if logger is not None:
        logger.add_log(f"pose_graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges, "
                       f"cost {result.history[0]:.6e} -> {result.cost:.6e}")
    return graph.with_poses(updated), result.cost
