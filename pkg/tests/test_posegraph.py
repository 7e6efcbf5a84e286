import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import least_squares

from src.errors import (
    DisconnectedGraphError, DisconnectedMergeError, GraphError, NoFixedNodeError, NonSpdInformationError,
)
from src.geometry.se3 import Se3Pose, generalized_minus, random_pose, se3_exp
from src.pointcloud.cloud import OdometryTrack, PointCloud, track_from_absolute
from src.posegraph.graph import (
    EdgeKind, GraphEdge, GraphNode, PoseGraph, diagonal_information, icp_information,
)
from src.posegraph.optimizer import edge_residual, graph_cost, optimize
from src.posegraph.slam import (
    SlamSettings, build_sequential_edges, densify_trajectory, find_loop_candidates, merge_graphs,
    select_nodes, verify_candidates,
)
from src.validator import EdgeWeightConfig, IcpConfig, NodeSelectionConfig
from tests.helpers import box_corner, yaw_pose

NS = 1_000_000_000
INFO = diagonal_information(0.05, 0.01)


def chain_graph(poses, sequence_id="a", first_id=0, world=None):
    """Nodes at the given poses joined by exact sequential edges; the first node is fixed."""
    nodes = []
    for k, pose in enumerate(poses):
        cloud = PointCloud(pose.inverse().act(world)) if world is not None else None
        nodes.append(GraphNode(first_id + k, sequence_id, k * NS, pose, cloud))
    edges = [GraphEdge(a.node_id, b.node_id, a.pose.inverse().compose(b.pose), INFO, EdgeKind.ICP_SEQUENTIAL)
             for a, b in zip(nodes, nodes[1:])]
    return PoseGraph(nodes, edges, [first_id])


def test_edge_rejects_self_loop_and_non_spd_information():
    with pytest.raises(GraphError):
        GraphEdge(1, 1, Se3Pose.identity(), INFO, EdgeKind.LOOP)
    with pytest.raises(NonSpdInformationError):
        GraphEdge(0, 1, Se3Pose.identity(), np.diag([1.0, 1.0, 1.0, 1.0, 1.0, -1.0]), EdgeKind.LOOP)
    with pytest.raises(NonSpdInformationError):
        GraphEdge(0, 1, Se3Pose.identity(), np.eye(5), EdgeKind.LOOP)


def test_graph_rejects_duplicates_and_unknown_ends():
    graph = PoseGraph([GraphNode(0, "a", 0, Se3Pose.identity())])
    with pytest.raises(GraphError):
        graph.add_node(GraphNode(0, "a", NS, Se3Pose.identity()))
    with pytest.raises(GraphError):
        graph.add_node(GraphNode(1, "a", 0, Se3Pose.identity()))
    with pytest.raises(GraphError):
        graph.add_edge(GraphEdge(0, 7, Se3Pose.identity(), INFO, EdgeKind.LOOP))


def test_validate_requires_fixed_node_and_connectivity():
    graph = chain_graph([Se3Pose.identity(), yaw_pose(0.1, 1.0)])
    graph.fixed.clear()
    with pytest.raises(NoFixedNodeError):
        optimize(graph)
    graph.fix(0)
    graph.add_node(GraphNode(5, "a", 9 * NS, Se3Pose.identity()))
    with pytest.raises(DisconnectedGraphError):
        optimize(graph)


def test_icp_information_is_floored():
    weights = EdgeWeightConfig(sigma_floor_t=0.01, sigma_floor_r=0.02)
    assert_allclose(np.diag(icp_information(0.0, weights)), [2500.0] * 3 + [10000.0] * 3)
    assert_allclose(np.diag(icp_information(0.5, weights)), [4.0] * 6)


def test_consistent_graph_is_a_fixed_point(rng):
    graph = chain_graph([random_pose(rng, 3.0, 0.5) for _ in range(5)])
    optimized, cost = optimize(graph)
    assert cost < 1e-20
    for node_id, node in graph.nodes.items():
        assert_allclose(optimized.nodes[node_id].pose.matrix(), node.pose.matrix(), atol=1e-12)


def test_three_node_triangle_recovers_poses():
    a = se3_exp([0.0, 0.0, 0.3, 1.0, 0.0, 0.0])
    b = se3_exp([0.0, 0.1, -0.2, 0.5, 0.5, 0.0])
    nodes = [
        GraphNode(0, "a", 0, Se3Pose.identity()),
        GraphNode(1, "a", NS, a.compose(se3_exp([0.05, 0.0, 0.0, 0.2, -0.1, 0.0]))),
        GraphNode(2, "a", 2 * NS, a.compose(b).compose(se3_exp([0.0, -0.05, 0.1, 0.0, 0.3, 0.1]))),
    ]
    edges = [
        GraphEdge(0, 1, a, INFO, EdgeKind.ICP_SEQUENTIAL),
        GraphEdge(1, 2, b, INFO, EdgeKind.ICP_SEQUENTIAL),
        GraphEdge(0, 2, a.compose(b), INFO, EdgeKind.LOOP),
    ]
    optimized, cost = optimize(PoseGraph(nodes, edges, [0]))
    assert cost < 1e-12
    assert_allclose(optimized.nodes[0].pose.matrix(), np.eye(4), atol=0.0)
    assert_allclose(generalized_minus(optimized.nodes[1].pose, a), np.zeros(6), atol=1e-6)
    assert_allclose(generalized_minus(optimized.nodes[2].pose, a.compose(b)), np.zeros(6), atol=1e-6)


def noisy_loop_graph(rng, fixed: int = 0):
    """Five random poses joined by eight noisy edges, started from perturbed poses."""
    truth = [Se3Pose.identity()] + [random_pose(rng, 3.0, 0.8) for _ in range(4)]
    pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3), (2, 4), (0, 4)]
    edges = []
    for i, j in pairs:
        noisy = truth[i].inverse().compose(truth[j]).compose(se3_exp(rng.normal(scale=0.03, size=6)))
        info = diagonal_information(rng.uniform(0.02, 0.2), rng.uniform(0.01, 0.05))
        edges.append(GraphEdge(i, j, noisy, info, EdgeKind.LOOP))
    start = [truth[0]] + [p.compose(se3_exp(rng.normal(scale=0.05, size=6))) for p in truth[1:]]
    return start, edges, PoseGraph([GraphNode(k, "a", k * NS, p) for k, p in enumerate(start)], edges, [fixed])


@pytest.mark.parametrize("seed", range(50))
def test_optimize_matches_dense_least_squares(seed):
    start, edges, graph = noisy_loop_graph(np.random.default_rng(seed))

    optimized, cost = optimize(graph, max_iter=100)

    roots = [np.linalg.cholesky(e.information).T for e in edges]

    def poses_of(d):
        return [start[0]] + [p.compose(se3_exp(d[6 * k:6 * k + 6])) for k, p in enumerate(start[1:])]

    def residuals(d):
        poses = poses_of(d)
        return np.concatenate([root @ edge_residual(poses[e.from_id], poses[e.to_id], e.relative)
                               for root, e in zip(roots, edges)])

    oracle = least_squares(residuals, np.zeros(24), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    assert cost == pytest.approx(float(np.sum(oracle.fun ** 2)), rel=1e-6)
    assert graph_cost(optimized) == pytest.approx(cost, rel=1e-9)
    for k, pose in enumerate(poses_of(oracle.x)):
        assert_allclose(generalized_minus(optimized.nodes[k].pose, pose), np.zeros(6), atol=1e-6)


def test_fixed_node_choice_only_moves_the_gauge(rng):
    state = rng.bit_generator.state
    _, _, first = noisy_loop_graph(rng, fixed=0)
    rng.bit_generator.state = state
    _, _, third = noisy_loop_graph(rng, fixed=2)

    a, cost_a = optimize(first, max_iter=100)
    b, cost_b = optimize(third, max_iter=100)

    assert cost_a == pytest.approx(cost_b, rel=1e-8)
    assert_allclose(a.nodes[0].pose.matrix(), first.nodes[0].pose.matrix(), atol=0.0)
    assert_allclose(b.nodes[2].pose.matrix(), third.nodes[2].pose.matrix(), atol=0.0)
    for i in range(5):
        for j in range(i + 1, 5):
            rel_a = a.nodes[i].pose.inverse().compose(a.nodes[j].pose)
            rel_b = b.nodes[i].pose.inverse().compose(b.nodes[j].pose)
            assert_allclose(generalized_minus(rel_a, rel_b), np.zeros(6), atol=1e-6)


def test_select_nodes_by_travel():
    odom = OdometryTrack([0, 3 * NS], [Se3Pose.identity(), Se3Pose(translation=(3.0, 0.0, 0.0))])
    stamps = [k * NS // 10 for k in range(30)]
    chosen = select_nodes(stamps, odom, NodeSelectionConfig(min_travel=0.45, max_interval=10.0))
    assert chosen == [0, 5, 10, 15, 20, 25]


def test_select_nodes_by_elapsed_time():
    odom = OdometryTrack([0, 5 * NS], [Se3Pose.identity()] * 2)
    stamps = [k * 3 * NS // 10 for k in range(12)]
    assert select_nodes(stamps, odom, NodeSelectionConfig(max_interval=1.0)) == [0, 4, 8]
    assert select_nodes([], odom) == []


def test_sequential_edges_single_node_and_fallback(rng):
    odom = OdometryTrack([0, NS], [Se3Pose.identity(), Se3Pose(translation=(1.0, 0.0, 0.0))])
    lonely = GraphNode(0, "a", 0, Se3Pose.identity(), PointCloud(rng.uniform(0, 1, (50, 3))))
    assert build_sequential_edges([lonely], odom, IcpConfig()) == []

    far = GraphNode(1, "a", NS, Se3Pose(translation=(1.0, 0.0, 0.0)), PointCloud(rng.uniform(0, 1, (50, 3)) + 50.0))
    weights = EdgeWeightConfig(odometry_sigma_t=0.2, odometry_sigma_r=0.1)
    (edge,) = build_sequential_edges([lonely, far], odom, IcpConfig(), weights)
    assert edge.kind == EdgeKind.ODOMETRY
    assert_allclose(edge.relative.translation, [1.0, 0.0, 0.0], atol=1e-12)
    assert_allclose(np.diag(edge.information), [100.0] * 3 + [25.0] * 3)


def test_sequential_edges_align_real_clouds(rng):
    world = box_corner(rng, 800, size=4.0)
    poses = [yaw_pose(0.0), yaw_pose(0.05, 0.3, 0.1)]
    graph = chain_graph(poses, world=world)
    nodes = list(graph.nodes.values())
    odom = track_from_absolute([0, NS], [poses[0], poses[1].compose(se3_exp([0, 0, 0.02, 0.05, 0, 0]))])
    (edge,) = build_sequential_edges(nodes, odom, SlamSettings().precise)
    assert edge.kind == EdgeKind.ICP_SEQUENTIAL
    assert_allclose(generalized_minus(edge.relative, poses[0].inverse().compose(poses[1])), np.zeros(6), atol=1e-5)


def test_loop_candidates_match_brute_force(rng):
    nodes = []
    for k in range(60):
        sequence = "a" if k < 40 else "b"
        stamp = (k if k < 40 else k - 40) * 2 * NS
        nodes.append(GraphNode(k, sequence, stamp, Se3Pose(translation=rng.uniform(0.0, 20.0, 3))))
    graph = PoseGraph(nodes)
    dist, gap = 4.0, 15.0
    expected = []
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            a, b = nodes[i], nodes[j]
            close = np.linalg.norm(a.pose.translation - b.pose.translation) < dist
            apart = a.sequence_id != b.sequence_id or abs(a.stamp_ns - b.stamp_ns) > gap * NS
            if close and apart:
                expected.append((i, j))
    assert find_loop_candidates(graph, dist, gap) == expected
    cross = find_loop_candidates(graph, dist, gap, cross_sequence_only=True)
    assert cross == [(i, j) for i, j in expected if nodes[i].sequence_id != nodes[j].sequence_id]


def test_verify_candidates_accepts_overlapping_clouds(rng):
    world = box_corner(rng, 800, size=4.0)
    graph = chain_graph([yaw_pose(0.0), yaw_pose(0.1, 0.5, 0.2)], world=world)
    settings = SlamSettings()
    result = verify_candidates([(0, 1)], graph, settings.rough, settings.precise, 0.3)
    assert result.report.accepted == 1
    (edge,) = result.edges
    assert edge.kind == EdgeKind.LOOP
    truth = graph.nodes[0].pose.inverse().compose(graph.nodes[1].pose)
    assert_allclose(generalized_minus(edge.relative, truth), np.zeros(6), atol=1e-5)


def test_verify_candidates_counts_rejections(rng):
    nodes = [
        GraphNode(0, "a", 0, Se3Pose.identity(), PointCloud(rng.uniform(0, 1, (100, 3)))),
        GraphNode(1, "a", NS, Se3Pose.identity(), PointCloud(rng.uniform(0, 1, (100, 3)) + 30.0)),
    ]
    graph = PoseGraph(nodes, fixed=[0])
    settings = SlamSettings()
    empty = verify_candidates([], graph, settings.rough, settings.precise, 0.3)
    assert empty.edges == [] and empty.report.candidates == 0
    rejected = verify_candidates([(0, 1)], graph, settings.rough, settings.precise, 0.3)
    assert rejected.edges == []
    assert rejected.report.rough_rejected == 1 and rejected.report.accepted == 0


def test_merge_links_overlapping_sequences(rng):
    world = box_corner(rng, 800, size=4.0)
    first = chain_graph([yaw_pose(0.0), yaw_pose(0.0, 1.0)], "a", world=world)
    second = chain_graph([yaw_pose(0.2, 0.4, 0.3), yaw_pose(0.2, 1.2, 0.5)], "b", first_id=0, world=world)
    merged = merge_graphs([first, second])
    assert list(merged.nodes) == [0, 1, 2, 3]
    assert merged.fixed == {0}
    assert [merged.nodes[k].sequence_id for k in range(4)] == ["a", "a", "b", "b"]
    assert any(e.kind == EdgeKind.CROSS_SEQUENCE for e in merged.edges)
    originals = list(first.nodes.values()) + list(second.nodes.values())
    for k, node in enumerate(originals):
        assert_allclose(generalized_minus(merged.nodes[k].pose, node.pose), np.zeros(6), atol=1e-5)


def test_merge_without_overlap_is_disconnected(rng):
    world = box_corner(rng, 300)
    first = chain_graph([yaw_pose(0.0), yaw_pose(0.0, 1.0)], "a", world=world)
    second = chain_graph([yaw_pose(0.0, 100.0), yaw_pose(0.0, 101.0)], "b", world=world)
    with pytest.raises(DisconnectedMergeError) as info:
        merge_graphs([first, second])
    assert info.value.sequence_id == "b"


def test_merge_of_one_graph_keeps_it(rng):
    graph = chain_graph([random_pose(rng, 2.0, 0.3) for _ in range(3)], first_id=10)
    merged = merge_graphs([graph])
    assert list(merged.nodes) == [0, 1, 2]
    assert merged.fixed == {0}
    assert len(merged.edges) == 2


def test_densify_chains_odometry_from_nodes():
    alignment = yaw_pose(0.3, 2.0, -1.0)
    times = [k * NS // 4 for k in range(9)]
    odom = OdometryTrack(times, [se3_exp([0.0, 0.0, 0.1 * k, 0.25 * k, 0.0, 0.0]) for k in range(9)])
    nodes = [GraphNode(k, "a", t, alignment.compose(odom.pose_at(t))) for k, t in enumerate((0, NS))]
    graph = PoseGraph(nodes, [GraphEdge(0, 1, nodes[0].pose.inverse().compose(nodes[1].pose), INFO,
                                        EdgeKind.ODOMETRY)], [0])
    dense = densify_trajectory(graph, "a", odom)
    assert [t for t, _ in dense] == times
    for t, pose in dense:
        assert_allclose(pose.matrix(), alignment.compose(odom.pose_at(t)).matrix(), atol=1e-12)
    with pytest.raises(GraphError):
        densify_trajectory(graph, "missing", odom)
