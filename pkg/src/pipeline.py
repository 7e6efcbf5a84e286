"""
Pipeline stages on in-memory datasets: per-sequence SLAM, graph merging,
spline-prior bundle adjustment and query localization.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.bundle.problem import BaProblem, autocalibrate_flags, initialize_image_poses
from src.bundle.solver import BaReport, map_statistics, solve_ba, triangulate_tracks
from src.dataset.io import Dataset, GroundTruth
from src.errors import DataError, InsufficientMatchesError
from src.geometry.camera import RigExtrinsic
from src.localize.pnp import LocalizationResult, pnp_ransac
from src.logger import Logger
from src.posegraph.graph import PoseGraph
from src.posegraph.slam import SlamSettings, densify_trajectory, merge_graphs, run_sequence_slam
from src.spline.se3_spline import spline_fit
from src.utils import format_markdown_table
from src.validator import PipelineConfig


def slam_settings(config: PipelineConfig, threads: Optional[int] = None) -> SlamSettings:
    return SlamSettings(
        node_selection=config.node_selection(),
        rough=config.icp_rough(),
        precise=config.icp_precise(),
        loop=config.loop_closure(),
        weights=config.edge_weights(),
        max_iter=config.graph_max_iter,
        threads=threads,
    )


def _fit_trajectories(dataset: Dataset, graph: PoseGraph, config: PipelineConfig,
                      logger: Optional[Logger]) -> Dataset:
    """Dense trajectory and spline of every sequence from the optimized nodes and the odometry."""
    spline_cfg = config.spline()
    trajectory, splines = {}, {}
    for sequence_id in graph.sequence_ids():
        if sequence_id not in dataset.odometry:
            raise DataError(f"sequence '{sequence_id}' has no odometry")
        dense = densify_trajectory(graph, sequence_id, dataset.odometry[sequence_id])
        trajectory[sequence_id] = dense
        fit = spline_fit(dense, spline_cfg.dt_ns, spline_cfg.max_iter, spline_cfg.jacobian_step, logger)
        splines[sequence_id] = fit.spline
    return replace(dataset, trajectory=trajectory, splines=splines, graph=graph, scans={})


def run_slam(dataset: Dataset, config: PipelineConfig, threads: Optional[int] = None,
             logger: Optional[Logger] = None) -> Dataset:
    """
    Motion-compensated pose-graph SLAM of every sequence.

    Each sequence keeps its own gauge (first node fixed at the coarse alignment);
    the returned dataset holds the side-by-side graph with node clouds, the dense
    trajectories and their splines, and drops the raw scans.
    """
    settings = slam_settings(config, threads)
    extrinsics = {lidar_id: dataset.rig[lidar_id] for lidar_id in dataset.lidars}
    combined = PoseGraph()
    next_id = 0
    for sequence_id, alignment in dataset.sequences.items():
        scans = dataset.scans.get(sequence_id, [])
        if not scans:
            continue
        if sequence_id not in dataset.odometry:
            raise DataError(f"sequence '{sequence_id}' has scans but no odometry")
        graph = run_sequence_slam(sequence_id, scans, extrinsics, dataset.odometry[sequence_id], alignment,
                                  settings, next_id, logger)
        for node in graph.nodes.values():
            combined.add_node(node)
        for edge in graph.edges:
            combined.add_edge(edge)
        for node_id in graph.fixed:
            combined.fix(node_id)
        next_id = max(combined.nodes) + 1
    if not combined.nodes:
        raise DataError("no sequence has LiDAR scans")
    return _fit_trajectories(dataset, combined, config, logger)


def split_graph(graph: PoseGraph) -> List[PoseGraph]:
    """One graph per sequence with its internal edges; the first node of each is fixed."""
    out = []
    for sequence_id in graph.sequence_ids():
        nodes = graph.sequence_nodes(sequence_id)
        ids = {n.node_id for n in nodes}
        edges = [e for e in graph.edges if e.from_id in ids and e.to_id in ids]
        out.append(PoseGraph(nodes, edges, [nodes[0].node_id]))
    return out


def _union(target: dict, source: dict, what: str) -> None:
    for key, value in source.items():
        if key in target:
            raise DataError(f"{what} '{key}' appears in more than one merge input")
        target[key] = value


def combine_datasets(datasets: Sequence[Dataset]) -> Dataset:
    """Union of several SLAM outputs (disjoint sequences, shared sensors and landmark ids)."""
    first = datasets[0]
    out = Dataset(cameras=dict(first.cameras), lidars=list(first.lidars), rig=dict(first.rig),
                  queries=first.queries, binary_clouds=first.binary_clouds)
    gt = GroundTruth() if any(d.ground_truth is not None for d in datasets) else None
    for dataset in datasets:
        _union(out.sequences, dataset.sequences, "sequence")
        out.odometry.update(dataset.odometry)
        _union(out.images, dataset.images, "image")
        out.observations.extend(dataset.observations)
        for landmark_id, landmark in dataset.landmarks.items():
            out.landmarks.setdefault(landmark_id, landmark)
        if dataset.ground_truth is not None:
            src = dataset.ground_truth
            gt.cameras.update(src.cameras)
            gt.lidars = list(dict.fromkeys(gt.lidars + src.lidars))
            gt.rig.update(src.rig)
            gt.trajectory.update(src.trajectory)
            gt.images.update(src.images)
            gt.landmarks.update(src.landmarks)
            gt.outliers.extend(o for o in src.outliers if o not in gt.outliers)
    if gt is not None:
        gt.landmarks = dict(sorted(gt.landmarks.items()))
    out.landmarks = dict(sorted(out.landmarks.items()))
    out.ground_truth = gt
    return out


def run_merge(datasets: Sequence[Dataset], config: PipelineConfig, threads: Optional[int] = None,
              logger: Optional[Logger] = None) -> Dataset:
    """
    Merge the per-sequence graphs of one or more SLAM outputs into a single
    graph linked by cross-sequence ICP edges, then refit trajectories and splines.

    Raises:
        DataError: an input has no graph
        DisconnectedMergeError: a sequence could not be linked to the others
    """
    graphs = []
    for dataset in datasets:
        if dataset.graph is None:
            raise DataError("merge input has no pose graph (run slam first)")
        graphs.extend(split_graph(dataset.graph))
    merged = merge_graphs(graphs, slam_settings(config, threads), logger)
    return _fit_trajectories(combine_datasets(datasets), merged, config, logger)


def to_problem(dataset: Dataset, config: PipelineConfig) -> BaProblem:
    """Bundle adjustment problem over the dataset as stored, with the calibration flags applied."""
    ba = config.ba()
    rig = {camera_id: RigExtrinsic(camera_id, dataset.rig[camera_id]) for camera_id in dataset.cameras}
    problem = BaProblem(
        splines=dict(dataset.splines), rig=rig, intrinsics=dict(dataset.cameras), images=dict(dataset.images),
        landmarks=dict(dataset.landmarks), observations=list(dataset.observations),
        cauchy_scale=ba.cauchy_scale, prior_weight=ba.prior_weight,
    )
    return autocalibrate_flags(problem, ba.optimize_intrinsics, ba.optimize_rig_rotation)


def build_problem(dataset: Dataset, config: PipelineConfig) -> BaProblem:
    problem = to_problem(dataset, config)
    if config.ba_init_from == "spline":
        problem = initialize_image_poses(problem)
    return problem


def run_ba(dataset: Dataset, config: PipelineConfig,
           logger: Optional[Logger] = None) -> Tuple[Dataset, BaReport]:
    """
    Triangulate every track from the initial image poses, run the bundle
    adjustment schedule and write the optimized poses, landmarks, activity
    flags and calibration back into the dataset.
    """
    ba = config.ba()
    problem = build_problem(dataset, config)
    problem, count = triangulate_tracks(problem, ba.tri_max_reproj, ba)
    if logger is not None:
        logger.add_log(f"ba: triangulated {count} of {len(problem.landmarks)} track(s)")
    problem, report = solve_ba(problem, config=ba, logger=logger)

    rig = dict(dataset.rig)
    for camera_id, extrinsic in problem.rig.items():
        rig[camera_id] = extrinsic.pose
    stats = pd.DataFrame([map_statistics(problem)])
    text = report.to_text() + "\n\n" + format_markdown_table(stats) + "\n"
    out = replace(dataset, images=dict(problem.images), landmarks=dict(problem.landmarks),
                  observations=list(problem.observations), cameras=dict(problem.intrinsics), rig=rig,
                  report=text)
    return out, report


def query_matches(queries: Dataset, map_dataset: Dataset) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """2D-3D matches per query image against the triangulated map landmarks."""
    matches: Dict[str, Tuple[List, List]] = {image_id: ([], []) for image_id in queries.images}
    for obs in queries.observations:
        landmark = map_dataset.landmarks.get(obs.landmark_id)
        if landmark is None or not landmark.triangulated:
            continue
        matches[obs.image_id][0].append(obs.pixel)
        matches[obs.image_id][1].append(landmark.position)
    return {k: (np.array(px, dtype=float).reshape(-1, 2), np.array(pts, dtype=float).reshape(-1, 3))
            for k, (px, pts) in matches.items()}


def run_localize(map_dataset: Dataset, queries: Dataset, config: PipelineConfig,
                 threads: Optional[int] = None, logger: Optional[Logger] = None) -> Dict[str, LocalizationResult]:
    """PnP-RANSAC for every query image; queries with fewer than four matches are not localized."""
    cfg = config.ransac()
    matches = query_matches(queries, map_dataset)

    def localize(image_id: str) -> LocalizationResult:
        pixels, points = matches[image_id]
        intrinsics = queries.cameras[queries.images[image_id].camera_id]
        try:
            return pnp_ransac(pixels, points, intrinsics, cfg)
        except InsufficientMatchesError:
            return LocalizationResult(None, np.zeros(len(pixels), dtype=bool), False, float("inf"))

    ids = list(queries.images)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = dict(zip(ids, pool.map(localize, ids)))
    if logger is not None:
        localized = sum(1 for r in results.values() if r.localized)
        logger.add_log(f"localize: {localized} of {len(results)} queries localized")
    return results
