"""
Pose-graph containers: platform-pose nodes and relative-pose edges.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from src.errors import DisconnectedGraphError, GraphError, NoFixedNodeError, NonSpdInformationError
from src.geometry.se3 import Se3Pose
from src.pointcloud.cloud import PointCloud
from src.validator import EdgeWeightConfig


class EdgeKind(str, Enum):
    ODOMETRY = "odometry"
    ICP_SEQUENTIAL = "icp-sequential"
    LOOP = "loop"
    CROSS_SEQUENCE = "cross-sequence"


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    sequence_id: str
    stamp_ns: int
    pose: Se3Pose
    cloud: Optional[PointCloud] = field(default=None, compare=False, repr=False)


def check_information(information: np.ndarray) -> np.ndarray:
    """Validate a 6x6 information matrix and return its Cholesky factor L (info = L L^T)."""
    information = np.asarray(information, dtype=float)
    if information.shape != (6, 6) or not np.all(np.isfinite(information)):
        raise NonSpdInformationError(f"information must be a finite 6x6 matrix, got shape {information.shape}")
    if not np.allclose(information, information.T, rtol=1e-12, atol=1e-12):
        raise NonSpdInformationError("information matrix is not symmetric")
    try:
        return np.linalg.cholesky(information)
    except np.linalg.LinAlgError as e:
        raise NonSpdInformationError("information matrix is not positive-definite") from e


@dataclass(frozen=True)
class GraphEdge:
    from_id: int
    to_id: int
    relative: Se3Pose
    information: np.ndarray
    kind: EdgeKind

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise GraphError(f"edge {self.from_id} -> {self.to_id} connects a node to itself")
        info = np.array(self.information, dtype=float)
        check_information(info)
        info.setflags(write=False)
        object.__setattr__(self, "information", info)
        object.__setattr__(self, "kind", EdgeKind(self.kind))


def diagonal_information(sigma_t: float, sigma_r: float) -> np.ndarray:
    """Diagonal information with the rotation block first, matching the twist order."""
    return np.diag([1.0 / sigma_r ** 2] * 3 + [1.0 / sigma_t ** 2] * 3)


def icp_information(rmse: float, weights: EdgeWeightConfig) -> np.ndarray:
    """Edge information from an ICP residual RMS, floored to avoid unbounded weights."""
    rmse = float(rmse) if np.isfinite(rmse) else 1.0
    return diagonal_information(max(rmse, weights.sigma_floor_t), max(rmse, weights.sigma_floor_r))


def odometry_information(weights: EdgeWeightConfig) -> np.ndarray:
    return diagonal_information(weights.odometry_sigma_t, weights.odometry_sigma_r)


class PoseGraph:
    """Nodes keyed by id (insertion ordered), edges, and the gauge-fixed node ids."""

    def __init__(self, nodes: Iterable[GraphNode] = (), edges: Iterable[GraphEdge] = (),
                 fixed: Iterable[int] = ()):
        self.nodes: Dict[int, GraphNode] = {}
        self.edges: List[GraphEdge] = []
        self.fixed: Set[int] = set()
        self._keys: Set[tuple] = set()
        for node in nodes:
            self.add_node(node)
        for edge in edges:
            self.add_edge(edge)
        for node_id in fixed:
            self.fix(node_id)

    def __len__(self) -> int:
        return len(self.nodes)

    def add_node(self, node: GraphNode) -> None:
        if node.node_id in self.nodes:
            raise GraphError(f"duplicate node id {node.node_id}")
        key = (node.sequence_id, node.stamp_ns)
        if key in self._keys:
            raise GraphError(f"duplicate node for sequence '{node.sequence_id}' at {node.stamp_ns} ns")
        self._keys.add(key)
        self.nodes[node.node_id] = node

    def add_edge(self, edge: GraphEdge) -> None:
        for end in (edge.from_id, edge.to_id):
            if end not in self.nodes:
                raise GraphError(f"edge {edge.from_id} -> {edge.to_id} references unknown node {end}")
        self.edges.append(edge)

    def fix(self, node_id: int) -> None:
        if node_id not in self.nodes:
            raise GraphError(f"cannot fix unknown node {node_id}")
        self.fixed.add(node_id)

    def copy(self) -> "PoseGraph":
        return PoseGraph(self.nodes.values(), self.edges, self.fixed)

    def with_poses(self, poses: Dict[int, Se3Pose]) -> "PoseGraph":
        nodes = [replace(n, pose=poses.get(n.node_id, n.pose)) for n in self.nodes.values()]
        return PoseGraph(nodes, self.edges, self.fixed)

    def sequence_ids(self) -> List[str]:
        seen: Dict[str, None] = {}
        for node in self.nodes.values():
            seen.setdefault(node.sequence_id, None)
        return list(seen)

    def sequence_nodes(self, sequence_id: str) -> List[GraphNode]:
        return sorted((n for n in self.nodes.values() if n.sequence_id == sequence_id), key=lambda n: n.stamp_ns)

    def components(self) -> np.ndarray:
        """Connected-component label per node, in node insertion order."""
        index = {node_id: i for i, node_id in enumerate(self.nodes)}
        n = len(index)
        if not self.edges:
            return np.arange(n)
        rows = [index[e.from_id] for e in self.edges]
        cols = [index[e.to_id] for e in self.edges]
        adjacency = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(adjacency, directed=False)
        return labels

    def validate(self) -> None:
        """Raise unless the graph is connected, has a fixed node and only SPD informations."""
        if not self.nodes:
            raise GraphError("pose graph has no nodes")
        if not self.fixed:
            raise NoFixedNodeError("pose graph has no gauge-fixed node")
        labels = self.components()
        if len(np.unique(labels)) > 1:
            ids = list(self.nodes)
            stray = ids[int(np.argmax(labels != labels[0]))]
            raise DisconnectedGraphError(f"pose graph has {len(np.unique(labels))} components "
                                         f"(node {stray} is not connected to node {ids[0]})")
        for edge in self.edges:
            check_information(edge.information)
