"""
LiDAR pose-graph SLAM stages: node selection, sequential ICP edges, loop
candidates with coarse-to-fine verification, multi-sequence merging and
trajectory densification.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.errors import DegenerateGeometryError, DisconnectedMergeError, GraphError, NoOverlapError
from src.geometry.se3 import Se3Pose
from src.logger import Logger
from src.pointcloud.cloud import LidarScan, OdometryTrack, PointCloud, merge_clouds, undistort_scan
from src.pointcloud.icp import icp_align
from src.posegraph.graph import (
    EdgeKind, GraphEdge, GraphNode, PoseGraph, icp_information, odometry_information,
)
from src.posegraph.optimizer import optimize
from src.validator import (
    EdgeWeightConfig, IcpConfig, LoopClosureConfig, NodeSelectionConfig,
)


@dataclass
class VerificationReport:
    candidates: int = 0
    rough_rejected: int = 0
    precise_rejected: int = 0
    accepted: int = 0


class VerificationResult(NamedTuple):
    edges: List[GraphEdge]
    report: VerificationReport


def select_nodes(stamps: Sequence[int], odom: OdometryTrack,
                 cfg: NodeSelectionConfig = NodeSelectionConfig()) -> List[int]:
    """
    Indices of the scan stamps that become graph nodes.

    A new node is started once the platform moved cfg.min_travel metres or
    cfg.max_interval seconds passed since the previous node.
    """
    if not len(stamps):
        return []
    chosen = [0]
    last = odom.pose_at(stamps[0])
    for i in range(1, len(stamps)):
        current = odom.pose_at(stamps[i])
        moved = np.linalg.norm(current.translation - last.translation)
        elapsed = (stamps[i] - stamps[chosen[-1]]) * 1e-9
        if moved >= cfg.min_travel or elapsed >= cfg.max_interval:
            chosen.append(i)
            last = current
    return chosen


def build_node_clouds(scans: Sequence[LidarScan], extrinsics: Dict[str, Se3Pose],
                      odom: OdometryTrack) -> Dict[int, PointCloud]:
    """Undistorted platform-frame cloud per scan stamp, concatenating all LiDARs of that stamp."""
    grouped: Dict[int, List[PointCloud]] = {}
    for scan in sorted(scans, key=lambda s: (s.stamp_ns, s.lidar_id)):
        cloud = undistort_scan(scan, extrinsics[scan.lidar_id], odom)
        grouped.setdefault(scan.stamp_ns, []).append(cloud)
    return {stamp: merge_clouds(clouds) for stamp, clouds in grouped.items()}


def _icp_edge(a: GraphNode, b: GraphNode, init: Se3Pose, cfg: IcpConfig,
              weights: EdgeWeightConfig, kind: EdgeKind) -> GraphEdge:
    result = icp_align(b.cloud, a.cloud, init, cfg)
    return GraphEdge(a.node_id, b.node_id, result.pose, icp_information(result.rmse, weights), kind)


def build_sequential_edges(
    nodes: Sequence[GraphNode],
    odom: OdometryTrack,
    cfg: IcpConfig,
    weights: EdgeWeightConfig = EdgeWeightConfig(),
    logger: Optional[Logger] = None,
) -> List[GraphEdge]:
    """
    ICP edges between consecutive nodes of one sequence, initialized from odometry.

    A pair without overlap (or with degenerate geometry) falls back to an
    odometry edge with the inflated odometry covariance.

    Args:
        nodes: Nodes of one sequence ordered by timestamp, with clouds attached
        odom: The sequence's odometry track
        cfg: ICP configuration
        weights: Edge weighting policy
        logger: Optional logger

    Returns:
        One edge per consecutive pair
    """
    edges = []
    for a, b in zip(nodes, nodes[1:]):
        init = odom.relative(a.stamp_ns, b.stamp_ns)
        try:
            edges.append(_icp_edge(a, b, init, cfg, weights, EdgeKind.ICP_SEQUENTIAL))
        except (NoOverlapError, DegenerateGeometryError) as e:
            if logger is not None:
                logger.add_log(f"sequential edge {a.node_id} -> {b.node_id}: {e}; using odometry")
            edges.append(GraphEdge(a.node_id, b.node_id, init, odometry_information(weights), EdgeKind.ODOMETRY))
    return edges


def find_loop_candidates(graph: PoseGraph, dist_thresh: float, min_time_gap: float,
                         cross_sequence_only: bool = False) -> List[Tuple[int, int]]:
    """
    Node pairs closer than dist_thresh that are either more than min_time_gap
    seconds apart or belong to different sequences.

    Returns:
        Sorted list of (from id, to id) with from preceding to in node order
    """
    nodes = list(graph.nodes.values())
    if len(nodes) < 2:
        return []
    positions = np.stack([n.pose.translation for n in nodes])
    pairs = cKDTree(positions).query_pairs(r=dist_thresh, output_type="ndarray")
    gap_ns = min_time_gap * 1e9
    out = []
    for i, j in pairs:
        i, j = (int(i), int(j)) if i < j else (int(j), int(i))
        a, b = nodes[i], nodes[j]
        if np.linalg.norm(positions[i] - positions[j]) >= dist_thresh:
            continue
        cross = a.sequence_id != b.sequence_id
        if cross_sequence_only and not cross:
            continue
        if cross or abs(a.stamp_ns - b.stamp_ns) > gap_ns:
            out.append((i, j))
    return [(nodes[i].node_id, nodes[j].node_id) for i, j in sorted(out)]


def verify_candidates(
    candidates: Sequence[Tuple[int, int]],
    graph: PoseGraph,
    rough_cfg: IcpConfig,
    precise_cfg: IcpConfig,
    min_fitness: float,
    weights: EdgeWeightConfig = EdgeWeightConfig(),
    threads: Optional[int] = None,
    logger: Optional[Logger] = None,
) -> VerificationResult:
    """
    Rough ICP on downsampled clouds, then precise ICP on the survivors.

    Candidates are initialized from the current node poses. Rejections are
    counted in the report, never raised.

    Args:
        candidates: (from id, to id) pairs
        graph: Graph holding the nodes, their poses and clouds
        rough_cfg: Coarse ICP configuration
        precise_cfg: Refinement ICP configuration
        min_fitness: Minimum inlier fraction for both stages
        weights: Edge weighting policy
        threads: Worker cap for the parallel ICP runs
        logger: Optional logger

    Returns:
        VerificationResult with the accepted edges (kind loop or cross-sequence) and the counts
    """
    report = VerificationReport(candidates=len(candidates))

    def verify(pair: Tuple[int, int]):
        a, b = graph.nodes[pair[0]], graph.nodes[pair[1]]
        init = a.pose.inverse().compose(b.pose)
        try:
            rough = icp_align(b.cloud, a.cloud, init, rough_cfg)
        except (NoOverlapError, DegenerateGeometryError):
            return "rough", None
        if rough.fitness < min_fitness:
            return "rough", None
        try:
            precise = icp_align(b.cloud, a.cloud, rough.pose, precise_cfg)
        except (NoOverlapError, DegenerateGeometryError):
            return "precise", None
        if precise.fitness < min_fitness:
            return "precise", None
        kind = EdgeKind.LOOP if a.sequence_id == b.sequence_id else EdgeKind.CROSS_SEQUENCE
        return "ok", GraphEdge(a.node_id, b.node_id, precise.pose, icp_information(precise.rmse, weights), kind)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(verify, candidates))

    edges = []
    for status, edge in outcomes:
        if status == "rough":
            report.rough_rejected += 1
        elif status == "precise":
            report.precise_rejected += 1
        else:
            report.accepted += 1
            edges.append(edge)
    if logger is not None:
        logger.add_log(f"loop verification: {report.candidates} candidates, {report.accepted} accepted, "
                       f"{report.rough_rejected} rejected by rough ICP, {report.precise_rejected} by precise ICP")
    return VerificationResult(edges, report)


@dataclass(frozen=True)
class SlamSettings:
    node_selection: NodeSelectionConfig = field(default_factory=NodeSelectionConfig)
    rough: IcpConfig = field(default_factory=lambda: IcpConfig(max_corr_dist=1.0, max_iter=10, voxel=0.5))
    precise: IcpConfig = field(default_factory=lambda: IcpConfig(max_corr_dist=0.3, max_iter=50,
                                                                 method="point_to_plane", trim=0.3))
    loop: LoopClosureConfig = field(default_factory=LoopClosureConfig)
    weights: EdgeWeightConfig = field(default_factory=EdgeWeightConfig)
    max_iter: int = 50
    threads: Optional[int] = None


def run_sequence_slam(
    sequence_id: str,
    scans: Sequence[LidarScan],
    extrinsics: Dict[str, Se3Pose],
    odom: OdometryTrack,
    alignment: Se3Pose = Se3Pose.identity(),
    settings: SlamSettings = SlamSettings(),
    first_node_id: int = 0,
    logger: Optional[Logger] = None,
) -> PoseGraph:
    """
    Pose-graph SLAM for one sequence.

    Args:
        sequence_id: Sequence name
        scans: LiDAR scans of the sequence
        extrinsics: LiDAR pose in the platform frame per lidar id
        odom: Wheel odometry of the sequence
        alignment: Coarse world pose of the platform at the odometry origin
        settings: Stage configuration
        first_node_id: Id given to the first node
        logger: Optional logger

    Returns:
        Optimized pose graph with the first node gauge-fixed
    """
    clouds = build_node_clouds(scans, extrinsics, odom)
    stamps = sorted(clouds)
    chosen = select_nodes(stamps, odom, settings.node_selection)
    nodes = [
        GraphNode(first_node_id + k, sequence_id, stamps[i],
                  alignment.compose(odom.pose_at(stamps[i])), clouds[stamps[i]])
        for k, i in enumerate(chosen)
    ]
    if logger is not None:
        logger.add_log(f"sequence {sequence_id}: {len(stamps)} scans, {len(nodes)} nodes")
    graph = PoseGraph(nodes)
    if not nodes:
        raise GraphError(f"sequence '{sequence_id}' has no scans")
    graph.fix(nodes[0].node_id)
    for edge in build_sequential_edges(nodes, odom, settings.precise, settings.weights, logger):
        graph.add_edge(edge)
    graph, _ = optimize(graph, settings.max_iter, logger)

    candidates = find_loop_candidates(graph, settings.loop.dist_thresh, settings.loop.min_time_gap)
    if candidates:
        verified = verify_candidates(candidates, graph, settings.rough, settings.precise,
                                     settings.loop.min_fitness, settings.weights, settings.threads, logger)
        for edge in verified.edges:
            graph.add_edge(edge)
        graph, cost = optimize(graph, settings.max_iter, logger)
        if logger is not None:
            logger.add_log(f"sequence {sequence_id}: {len(verified.edges)} loop edge(s), final cost {cost:.6e}")
    return graph


def merge_graphs(
    graphs: Sequence[PoseGraph],
    settings: SlamSettings = SlamSettings(),
    logger: Optional[Logger] = None,
) -> PoseGraph:
    """
    Merge per-sequence graphs into one, linked by verified cross-sequence edges.

    Node ids are offset so they stay unique; the first node of the first
    sequence is the only gauge-fixed node.

    Raises:
        DisconnectedMergeError: a sequence has no cross-sequence edge linking it to the others
    """
    if not graphs:
        raise GraphError("merge needs at least one graph")
    merged = PoseGraph()
    offset = 0
    for graph in graphs:
        mapping = {node_id: offset + k for k, node_id in enumerate(graph.nodes)}
        for node in graph.nodes.values():
            merged.add_node(replace(node, node_id=mapping[node.node_id]))
        for edge in graph.edges:
            merged.add_edge(replace(edge, from_id=mapping[edge.from_id], to_id=mapping[edge.to_id]))
        offset += len(graph.nodes)
    first = next(iter(merged.nodes))
    merged.fix(first)
    if len(graphs) == 1:
        return merged

    candidates = find_loop_candidates(merged, settings.loop.dist_thresh, settings.loop.min_time_gap,
                                      cross_sequence_only=True)
    verified = verify_candidates(candidates, merged, settings.rough, settings.precise,
                                 settings.loop.min_fitness, settings.weights, settings.threads, logger)
    for edge in verified.edges:
        merged.add_edge(edge)

    sequences = merged.sequence_ids()
    links: Dict[str, set] = {s: set() for s in sequences}
    for edge in verified.edges:
        a = merged.nodes[edge.from_id].sequence_id
        b = merged.nodes[edge.to_id].sequence_id
        links[a].add(b)
        links[b].add(a)
    reached = {sequences[0]}
    frontier = [sequences[0]]
    while frontier:
        for other in links[frontier.pop()]:
            if other not in reached:
                reached.add(other)
                frontier.append(other)
    for sequence_id in sequences:
        if sequence_id not in reached:
            raise DisconnectedMergeError(sequence_id)

    merged, cost = optimize(merged, settings.max_iter, logger)
    if logger is not None:
        logger.add_log(f"merge: {len(sequences)} sequences, {len(verified.edges)} cross-sequence edge(s), "
                       f"final cost {cost:.6e}")
    return merged


def densify_trajectory(graph: PoseGraph, sequence_id: str, odom: OdometryTrack) -> List[Tuple[int, Se3Pose]]:
    """
    Dense world trajectory of one sequence: every odometry sample is chained
    from the nearest preceding optimized node (the first node for earlier samples).

    Returns:
        (timestamp ns, platform pose) pairs at the odometry timestamps
    """
    nodes = graph.sequence_nodes(sequence_id)
    if not nodes:
        raise GraphError(f"graph has no nodes for sequence '{sequence_id}'")
    node_times = np.array([n.stamp_ns for n in nodes], dtype=np.int64)
    anchors = [n.pose.compose(odom.pose_at(n.stamp_ns).inverse()) for n in nodes]
    out = []
    for t, relative in zip(odom.times, odom.poses):
        k = max(int(np.searchsorted(node_times, t, side="right")) - 1, 0)
        out.append((int(t), anchors[k].compose(relative)))
    return out
