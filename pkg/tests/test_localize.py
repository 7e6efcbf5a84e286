import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ConfigError, DataError, InsufficientMatchesError
from src.geometry.camera import bearing_vectors, project_points
from src.geometry.se3 import Se3Pose, generalized_minus, random_pose, se3_exp
from src.localize.evaluate import accuracy_curve, evaluate, evaluate_subsets, pose_error
from src.localize.lowfreq import GrayImage, lowfreq_score, lowfreq_table, read_pgm, write_pgm
from src.localize.pnp import p3p, pnp_ransac
from src.validator import RansacConfig
from tests.helpers import looking_at, yaw_pose


def scene(rng, intrinsics, n: int = 20):
    """Camera pose T_WC, world points in its field of view, and their exact pixels."""
    pose = looking_at([1.0, -2.0, 1.5], [6.0, 1.0, 1.0])
    p_cam = np.column_stack([rng.uniform(-2.0, 2.0, n), rng.uniform(-1.5, 1.5, n), rng.uniform(4.0, 9.0, n)])
    return pose, pose.act(p_cam), project_points(intrinsics, p_cam)


def with_error(position: float, degrees: float) -> Se3Pose:
    return yaw_pose(np.radians(degrees), position)


def test_p3p_contains_the_true_pose(rng, intrinsics):
    pose, points, pixels = scene(rng, intrinsics, 3)
    candidates = p3p(bearing_vectors(intrinsics, pixels), points)
    assert candidates
    truth = pose.inverse()
    best = min(np.linalg.norm(generalized_minus(c, truth)) for c in candidates)
    assert best < 1e-7


def test_p3p_rejects_collinear_points(intrinsics):
    points = np.array([[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [2.0, 0.0, 5.0]])
    pixels = project_points(intrinsics, points)
    assert p3p(bearing_vectors(intrinsics, pixels), points) == []


def test_pnp_ransac_recovers_exact_pose(rng, intrinsics):
    pose, points, pixels = scene(rng, intrinsics)
    result = pnp_ransac(pixels, points, intrinsics)
    assert result.localized
    assert result.num_inliers == 20
    assert np.linalg.norm(result.pose.translation - pose.translation) < 1e-6
    assert pose_error(result.pose, pose).angle < np.degrees(1e-6)
    assert result.mean_error < 1e-6


def test_pnp_ransac_ignores_outliers(rng, intrinsics):
    pose, points, pixels = scene(rng, intrinsics, 40)
    corrupted = pixels.copy()
    direction = rng.uniform(0.0, 2.0 * np.pi, 10)
    corrupted[:10] += 50.0 * np.column_stack([np.cos(direction), np.sin(direction)])
    result = pnp_ransac(corrupted, points, intrinsics, RansacConfig(seed=3))
    assert result.localized
    assert not result.inliers[:10].any()
    assert result.inliers[10:].all()
    assert np.linalg.norm(result.pose.translation - pose.translation) < 1e-6


def test_pnp_ransac_is_reproducible(rng, intrinsics):
    _, points, pixels = scene(rng, intrinsics, 30)
    noisy = pixels + rng.normal(0.0, 1.0, pixels.shape)
    noisy[:8] = rng.uniform([0.0, 0.0], [640.0, 480.0], (8, 2))
    cfg = RansacConfig(iterations=50, seed=11)
    first = pnp_ransac(noisy, points, intrinsics, cfg)
    second = pnp_ransac(noisy, points, intrinsics, cfg)
    assert np.array_equal(first.inliers, second.inliers)
    assert np.array_equal(first.pose.matrix(), second.pose.matrix())


def test_pnp_ransac_needs_four_matches(rng, intrinsics):
    _, points, pixels = scene(rng, intrinsics, 3)
    with pytest.raises(InsufficientMatchesError):
        pnp_ransac(pixels, points, intrinsics)


def test_pnp_ransac_with_only_outliers_is_not_localized(rng, intrinsics):
    points = rng.uniform(-5.0, 5.0, (20, 3)) + np.array([0.0, 0.0, 12.0])
    pixels = rng.uniform([0.0, 0.0], [640.0, 480.0], (20, 2))
    result = pnp_ransac(pixels, points, intrinsics, RansacConfig(iterations=200))
    assert not result.localized
    assert result.pose is None
    assert result.mean_error == float("inf")


def test_pose_error_examples():
    gt = Se3Pose.identity()
    error = pose_error(with_error(0.3, 4.0), gt)
    assert error.position == pytest.approx(0.3)
    assert error.angle == pytest.approx(4.0)
    assert pose_error(gt, gt).position == 0.0
    assert pose_error(gt, gt).angle == pytest.approx(0.0, abs=1e-6)


def test_pose_error_angle_is_symmetric(rng):
    for _ in range(100):
        a, b = random_pose(rng, 5.0), random_pose(rng, 5.0)
        assert pose_error(a, b).angle == pytest.approx(pose_error(b, a).angle, abs=1e-12)
        assert pose_error(a, b).position == pytest.approx(pose_error(b, a).position, abs=1e-12)


def test_evaluate_counts_nested_thresholds():
    gt = {f"q{k}": Se3Pose.identity() for k in range(4)}
    estimates = {"q0": with_error(0.05, 0.5), "q1": with_error(0.2, 1.5),
                 "q2": with_error(0.5, 3.0), "q3": with_error(2.0, 10.0)}
    report = evaluate(estimates, gt)
    assert report.fractions == [0.25, 0.5, 0.75]
    assert report.unlocalized == 0
    frame = report.to_frame()
    assert list(frame.columns) == ["query_id", "pos_err_m", "ang_err_deg",
                                   "localized_0.1", "localized_0.25", "localized_1.0"]
    assert frame["localized_1.0"].tolist() == [1, 1, 1, 0]


def test_evaluate_perfect_and_empty():
    gt = {f"q{k}": random_pose(np.random.default_rng(k), 3.0) for k in range(5)}
    assert evaluate(dict(gt), gt).fractions == [1.0, 1.0, 1.0]
    missing = evaluate({}, gt)
    assert missing.fractions == [0.0, 0.0, 0.0]
    assert missing.unlocalized == 5
    assert evaluate({}, {}).fractions == [0.0, 0.0, 0.0]
    assert evaluate({"q0": None}, gt).unlocalized == 5


def test_evaluate_matches_brute_force(rng):
    gt, estimates = {}, {}
    for k in range(1000):
        truth = random_pose(rng, 10.0)
        gt[f"q{k:04d}"] = truth
        scale = rng.choice([0.02, 0.1, 0.5, 2.0])
        estimates[f"q{k:04d}"] = truth.compose(se3_exp(rng.normal(scale=[scale * 0.05] * 3 + [scale] * 3)))
    report = evaluate(estimates, gt)
    expected = []
    for t_pos, t_ang in [(0.1, 1.0), (0.25, 2.0), (1.0, 5.0)]:
        hits = 0
        for query_id, truth in gt.items():
            est = estimates[query_id]
            position = np.linalg.norm(est.translation - truth.translation)
            cos = np.clip((np.trace(truth.rotation.T @ est.rotation) - 1.0) / 2.0, -1.0, 1.0)
            hits += position <= t_pos and np.degrees(np.arccos(cos)) <= t_ang
        expected.append(hits / 1000)
    assert report.fractions == expected
    assert report.fractions == sorted(report.fractions)


def test_evaluate_rejects_bad_input():
    gt = {"q0": Se3Pose.identity()}
    with pytest.raises(ConfigError):
        evaluate({}, gt, thresholds=[(1.0, 5.0), (0.1, 1.0)])
    with pytest.raises(DataError):
        evaluate({"other": Se3Pose.identity()}, gt)


def test_accuracy_curve_is_monotonic():
    errors = [pose_error(with_error(p, 10.0 * p), Se3Pose.identity()) for p in (0.05, 0.2, 0.6)] + [None]
    curve = accuracy_curve(errors)
    assert len(curve) == 100
    assert np.all(np.diff(curve["fraction"]) >= 0)
    assert curve["fraction"].iloc[-1] == 0.75
    assert_allclose(curve["angle_deg"], 10.0 * curve["position_m"])


def test_evaluate_subsets_splits_queries():
    gt = {f"q{k}": Se3Pose.identity() for k in range(4)}
    estimates = {"q0": with_error(0.05, 0.5), "q1": with_error(2.0, 10.0), "q2": Se3Pose.identity()}
    low, rest = evaluate_subsets(estimates, gt, {"q0", "q1"})
    assert low.fractions == [0.5, 0.5, 0.5]
    assert rest.fractions == [0.5, 0.5, 0.5]
    assert rest.unlocalized == 1


def dense_dft_score(pixels: np.ndarray, cutoff: float) -> float:
    n = pixels.shape[0]
    k = np.arange(n)
    f = np.exp(-2j * np.pi * np.outer(k, k) / n)
    spectrum = f @ pixels @ f.T
    freq = np.where(k < (n + 1) // 2, k, k - n) / n
    keep = np.sqrt(freq[:, None] ** 2 + freq[None, :] ** 2) <= 0.5 * cutoff
    filtered = np.real(np.conj(f) @ (spectrum * keep) @ np.conj(f).T) / (n * n)
    return float(np.mean(np.abs(pixels - filtered)))


def test_lowfreq_constant_image_scores_zero():
    assert lowfreq_score(GrayImage(np.full((16, 24), 77.0))) == pytest.approx(0.0, abs=1e-12)


def test_lowfreq_smooth_cosine_passes_the_filter():
    x = np.arange(32)
    pixels = 128.0 + 100.0 * np.cos(2.0 * np.pi * 2.0 * x / 32.0)[None, :].repeat(32, axis=0)
    assert lowfreq_score(GrayImage(pixels)) < 1e-6


def test_lowfreq_checkerboard_matches_dense_dft(rng):
    board = 255.0 * ((np.add.outer(np.arange(32), np.arange(32)) % 2) == 0)
    score = lowfreq_score(GrayImage(board), 0.25)
    assert score == pytest.approx(dense_dft_score(board, 0.25), abs=1e-9)
    assert score == pytest.approx(127.5, abs=1e-9)
    textured = rng.uniform(0.0, 255.0, (32, 32))
    assert lowfreq_score(GrayImage(textured), 0.25) == pytest.approx(dense_dft_score(textured, 0.25), abs=1e-9)


def test_lowfreq_table_classifies_at_twenty():
    board = 255.0 * ((np.add.outer(np.arange(32), np.arange(32)) % 2) == 0)
    table = lowfreq_table({"b": GrayImage(board), "a": GrayImage(np.full((32, 32), 10.0))})
    assert table["image_id"].tolist() == ["a", "b"]
    assert table["low_frequency"].tolist() == [True, False]


def test_pgm_round_trip(tmp_path, rng):
    image = GrayImage(np.rint(rng.uniform(0.0, 255.0, (12, 17))))
    write_pgm(image, tmp_path / "img.pgm")
    assert (tmp_path / "img.pgm").read_bytes().startswith(b"P5")
    assert np.array_equal(read_pgm(tmp_path / "img.pgm").pixels, image.pixels)


def test_plain_pgm_is_read(tmp_path):
    (tmp_path / "ascii.pgm").write_bytes(b"P2\n2 2\n255\n0 64 128 255\n")
    assert np.array_equal(read_pgm(tmp_path / "ascii.pgm").pixels, [[0.0, 64.0], [128.0, 255.0]])


def test_pgm_errors(tmp_path):
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    (tmp_path / "junk.pgm").write_bytes(b"not an image at all")
    for name in ("short.pgm", "junk.pgm", "missing.pgm"):
        with pytest.raises(DataError):
            read_pgm(tmp_path / name)
    with pytest.raises(DataError):
        GrayImage(np.full((2, 2), 300.0))
