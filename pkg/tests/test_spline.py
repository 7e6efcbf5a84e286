import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import InsufficientSamplesError, NonMonotonicTimestampsError, OutOfDomainError
from src.geometry.se3 import Se3Pose, compose_batch, generalized_minus, random_pose, se3_exp, se3_exp_batch
from src.spline.se3_spline import Se3Spline, cumulative_basis, spline_evaluate, spline_fit

NS = 1_000_000_000


def translating_spline(n: int = 8) -> Se3Spline:
    return Se3Spline(0, NS, [Se3Pose(translation=(float(j), 0.0, 0.0)) for j in range(n)])


def test_basis_at_segment_boundaries():
    assert_allclose(cumulative_basis(np.array([0.0, 1.0])), [[5 / 6, 1 / 6, 0.0], [1.0, 5 / 6, 1 / 6]])


def test_identity_controls_give_identity():
    spline = Se3Spline(0, NS, [Se3Pose.identity()] * 6)
    for t in np.linspace(spline.domain[0], spline.domain[1] - 1, 17).astype(np.int64):
        assert_allclose(spline_evaluate(spline, int(t)).matrix(), np.eye(4), atol=1e-15)


def test_equally_spaced_translations_reproduce_constant_velocity():
    spline = translating_spline()
    lo, hi = spline.domain
    times = np.linspace(lo, hi - 1, 1000).astype(np.int64)
    rot, trans = spline.evaluate_batch(times)
    assert_allclose(trans[:, 0], times / NS, atol=1e-9)
    assert_allclose(trans[:, 1:], 0.0, atol=1e-15)
    assert_allclose(rot, np.broadcast_to(np.eye(3), rot.shape), atol=1e-15)


def test_domain_is_half_open():
    spline = translating_spline(6)
    assert spline.domain == (NS, 4 * NS)
    spline_evaluate(spline, NS)
    with pytest.raises(OutOfDomainError):
        spline_evaluate(spline, 4 * NS)
    with pytest.raises(OutOfDomainError):
        spline_evaluate(spline, NS - 1)


def test_local_support(rng):
    controls = [random_pose(rng, 2.0, 0.5) for _ in range(10)]
    spline = Se3Spline(0, NS, controls)
    j = 5
    moved = list(controls)
    moved[j] = moved[j].compose(se3_exp([0.1, 0.0, 0.0, 0.2, 0.0, 0.0]))
    other = spline.with_controls(moved)
    lo, hi = spline.domain
    times = np.arange(lo, hi, NS // 10, dtype=np.int64)
    r0, t0 = spline.evaluate_batch(times)
    r1, t1 = other.evaluate_batch(times)
    outside = (times < (j - 2) * NS) | (times >= (j + 2) * NS)
    assert np.any(outside) and np.any(~outside)
    assert np.array_equal(r0[outside], r1[outside])
    assert np.array_equal(t0[outside], t1[outside])
    assert not np.allclose(t0[~outside], t1[~outside])


def test_fit_to_constant_pose():
    pose = se3_exp([0.1, 0.2, -0.3, 1.0, -2.0, 0.5])
    samples = [(k * NS // 10, pose) for k in range(40)]
    fit = spline_fit(samples, NS // 5)
    assert fit.rms < 1e-9
    for control in fit.spline.control_poses:
        assert_allclose(control.matrix(), pose.matrix(), atol=1e-9)


def test_fit_to_screw_motion():
    xi = np.array([0.0, 0.1, 0.3, 1.0, 0.2, 0.0])
    step = NS // 10
    start = se3_exp([0.0, 0.0, 0.5, 2.0, 1.0, 0.0])
    samples = [(k * step, start.compose(se3_exp(k * 0.1 * xi))) for k in range(30)]
    fit = spline_fit(samples, step, max_iter=100)
    assert fit.rms < 1e-6
    for t, pose in samples:
        assert fit.spline.contains(t)
        assert_allclose(generalized_minus(fit.spline.evaluate(t), pose), np.zeros(6), atol=1e-6)


def test_fit_domain_covers_every_sample(rng):
    times = np.cumsum(rng.integers(NS // 20, NS // 5, 25))
    samples = [(int(t), random_pose(rng, 0.1, 0.1)) for t in times]
    fit = spline_fit(samples, NS // 4, max_iter=5)
    assert np.all(fit.spline.contains(times))


def test_fit_needs_four_samples():
    samples = [(k * NS, Se3Pose.identity()) for k in range(3)]
    with pytest.raises(InsufficientSamplesError):
        spline_fit(samples, NS // 10)


def test_fit_needs_three_knot_spans():
    samples = [(k * NS // 100, Se3Pose.identity()) for k in range(10)]
    with pytest.raises(InsufficientSamplesError):
        spline_fit(samples, NS)


def test_fit_rejects_non_monotonic_timestamps():
    samples = [(t, Se3Pose.identity()) for t in (0, NS, 2 * NS, 2 * NS, 4 * NS)]
    with pytest.raises(NonMonotonicTimestampsError):
        spline_fit(samples, NS // 2)


def test_geodesic_controls_reproduce_the_geodesic(rng):
    # B1 + B2 + B3 = 1 + u, so controls A exp(j xi) give A exp((t - t0) / dt * xi) everywhere
    for _ in range(100):
        start = random_pose(rng, 5.0)
        omega = rng.normal(size=3)
        omega *= rng.uniform(0.0, 0.5) / np.linalg.norm(omega)
        xi = np.concatenate([omega, rng.normal(size=3)])
        spline = Se3Spline(0, NS, [start.compose(se3_exp(j * xi)) for j in range(10)])
        lo, hi = spline.domain
        times = rng.integers(lo, hi, 100)
        rot, trans = spline.evaluate_batch(times)
        step_r, step_t = se3_exp_batch(np.outer(times / NS, xi))
        expected_r, expected_t = compose_batch(start.rotation, start.translation, step_r, step_t)
        assert_allclose(rot, expected_r, atol=1e-9)
        assert_allclose(trans, expected_t, atol=1e-8)


def test_batch_evaluation_matches_single_evaluation(rng):
    spline = Se3Spline(0, NS // 10, [random_pose(rng, 2.0, 0.6) for _ in range(40)])
    lo, hi = spline.domain
    times = rng.integers(lo, hi, 10_000)
    rot, trans = spline.evaluate_batch(times)
    for k, t in enumerate(times):
        pose = spline_evaluate(spline, int(t))
        assert_allclose(pose.rotation, rot[k], atol=1e-12)
        assert_allclose(pose.translation, trans[k], atol=1e-12)


def test_refitting_a_fitted_spline_returns_it(rng):
    xi = np.array([0.05, 0.1, 0.4, 1.0, 0.3, 0.0])
    step = NS // 50
    samples = [(k * step, se3_exp(k * 0.02 * xi).compose(se3_exp(rng.normal(scale=0.01, size=6))))
               for k in range(200)]
    first = spline_fit(samples, NS // 10, max_iter=100)
    assert first.rms > 1e-4
    second = spline_fit([(t, first.spline.evaluate(t)) for t, _ in samples], NS // 10, max_iter=100)
    assert second.rms < 1e-9
    assert len(second.spline) == len(first.spline)
    for a, b in zip(first.spline.control_poses, second.spline.control_poses):
        assert_allclose(generalized_minus(b, a), np.zeros(6), atol=1e-7)
