import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm, logm
from scipy.spatial.transform import Rotation

from src.errors import BehindCameraError, IllConditionedLogError
from src.geometry.camera import (
    CameraIntrinsics, bearing_vectors, project, project_points, projection_jacobians, unproject,
)
from src.geometry.se3 import (
    Se3Pose, compose_batch, generalized_minus, hat, inverse_batch, random_pose, se3_exp, se3_exp_batch, se3_log,
    se3_log_batch,
)


def twist_matrix(xi):
    mat = np.zeros((4, 4))
    mat[:3, :3] = hat(xi[:3])
    mat[:3, 3] = xi[3:]
    return mat


def test_exp_of_zero_is_identity():
    pose = se3_exp(np.zeros(6))
    assert_allclose(pose.matrix(), np.eye(4), atol=1e-15)


def test_exp_pure_rotation_about_z():
    pose = se3_exp([0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0])
    assert_allclose(pose.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
    assert_allclose(pose.translation, np.zeros(3), atol=1e-15)


def test_exp_with_translation_matches_matrix_exponential():
    xi = np.array([0.0, 0.0, np.pi / 2, 1.0, 0.0, 0.0])
    pose = se3_exp(xi)
    assert_allclose(pose.matrix(), expm(twist_matrix(xi)), atol=1e-12)
    assert_allclose(pose.translation, (2.0 / np.pi) * np.array([1.0, 1.0, 0.0]), atol=1e-12)


def test_exp_batch_matches_matrix_exponential(rng):
    xi = rng.normal(size=(50, 6))
    rot, trans = se3_exp_batch(xi)
    for k in range(len(xi)):
        mat = expm(twist_matrix(xi[k]))
        assert_allclose(rot[k], mat[:3, :3], atol=1e-10)
        assert_allclose(trans[k], mat[:3, 3], atol=1e-10)


def test_small_angle_exp_is_continuous():
    xi = np.array([1e-10, 0.0, 0.0, 0.5, 0.0, 0.0])
    pose = se3_exp(xi)
    assert_allclose(pose.translation, [0.5, 0.0, 0.0], atol=1e-12)
    assert_allclose(se3_log(pose), xi, atol=1e-12)


def test_generalized_minus_of_equal_poses_is_zero(rng):
    pose = random_pose(rng)
    assert_allclose(generalized_minus(pose, pose), np.zeros(6), atol=1e-12)


def test_generalized_minus_from_identity_recovers_twist():
    xi = np.array([0.1, -0.2, 0.3, 1.0, 2.0, -0.5])
    assert_allclose(generalized_minus(se3_exp(xi), Se3Pose.identity()), xi, atol=1e-12)


def test_generalized_minus_matches_matrix_logarithm(rng):
    for _ in range(20):
        b = random_pose(rng)
        axis = rng.normal(size=3)
        axis *= 0.3 / np.linalg.norm(axis)
        a = b.compose(se3_exp(np.concatenate([axis, rng.normal(size=3)])))
        oracle = np.real(logm(np.linalg.inv(b.matrix()) @ a.matrix()))
        expected = np.array([oracle[2, 1], oracle[0, 2], oracle[1, 0], *oracle[:3, 3]])
        assert_allclose(generalized_minus(a, b), expected, atol=1e-9)


def test_exp_log_round_trip_on_random_pairs(rng):
    for _ in range(10_000):
        b = random_pose(rng, max_translation=5.0)
        omega = rng.normal(size=3)
        omega *= rng.uniform(0.0, 1.99) / np.linalg.norm(omega)
        xi = np.concatenate([omega, rng.normal(size=3)])
        assert_allclose(generalized_minus(b.compose(se3_exp(xi)), b), xi, atol=1e-8)


def test_log_near_pi_is_ill_conditioned():
    pose = se3_exp([0.0, 0.0, np.pi, 0.0, 0.0, 0.0])
    with pytest.raises(IllConditionedLogError):
        se3_log(pose)


def test_log_batch_has_no_singularity_check():
    rot, trans = se3_exp_batch(np.array([[0.0, 0.0, np.pi - 1e-3, 0.1, 0.0, 0.0]]))
    xi = se3_log_batch(rot, trans)
    assert_allclose(xi[0, 2], np.pi - 1e-3, atol=1e-9)


def test_batch_maps_on_ten_thousand_random_cases(rng):
    n = 10_000
    omega = rng.normal(size=(n, 3))
    omega *= rng.uniform(0.0, np.pi - 0.01, (n, 1)) / np.linalg.norm(omega, axis=1, keepdims=True)
    xi = np.hstack([omega, rng.uniform(-5.0, 5.0, (n, 3))])
    rot, trans = se3_exp_batch(xi)
    assert_allclose(rot @ np.swapaxes(rot, 1, 2), np.broadcast_to(np.eye(3), rot.shape), atol=1e-12)
    assert_allclose(np.linalg.det(rot), 1.0, atol=1e-12)
    assert_allclose(se3_log_batch(rot, trans), xi, atol=1e-7)

    rot = Rotation.random(n, random_state=rng).as_matrix()
    trans = rng.uniform(-5.0, 5.0, (n, 3))
    back_r, back_t = se3_exp_batch(se3_log_batch(rot, trans))
    assert_allclose(back_r, rot, atol=1e-8)
    assert_allclose(back_t, trans, atol=1e-7)

    inv_r, inv_t = inverse_batch(rot, trans)
    eye_r, zero_t = compose_batch(rot, trans, inv_r, inv_t)
    assert_allclose(eye_r, np.broadcast_to(np.eye(3), rot.shape), atol=1e-12)
    assert_allclose(zero_t, 0.0, atol=1e-12)


def test_quaternion_is_canonical():
    pose = Se3Pose((-0.5, 0.5, 0.5, 0.5), (0.0, 0.0, 0.0))
    assert pose.quaternion[0] >= 0
    assert_allclose(np.linalg.norm(pose.quaternion), 1.0, atol=1e-15)
    unit = np.array([0.5, 0.5, 0.5, 0.5])
    assert np.array_equal(Se3Pose(unit).quaternion, unit)


def test_pose_is_immutable():
    pose = Se3Pose.identity()
    with pytest.raises(AttributeError):
        pose.foo = 1
    with pytest.raises(ValueError):
        pose.translation[0] = 1.0


def test_compose_inverse_and_act(rng):
    a, b = random_pose(rng), random_pose(rng)
    assert_allclose(a.compose(b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)
    assert_allclose(a.compose(a.inverse()).matrix(), np.eye(4), atol=1e-12)
    points = rng.normal(size=(5, 3))
    assert_allclose(a.act(points), (a.matrix() @ np.c_[points, np.ones(5)].T).T[:, :3], atol=1e-12)


def test_interpolate_endpoints_and_midpoint():
    a = Se3Pose.identity()
    b = se3_exp([0.0, 0.0, 0.4, 2.0, 0.0, 0.0])
    assert_allclose(a.interpolate(b, 0.0).matrix(), a.matrix(), atol=1e-12)
    assert_allclose(a.interpolate(b, 1.0).matrix(), b.matrix(), atol=1e-12)
    assert_allclose(a.interpolate(b, 0.5).matrix(), se3_exp([0.0, 0.0, 0.2, 1.0, 0.0, 0.0]).matrix(), atol=1e-12)


def test_project_on_optical_axis():
    cam = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
    assert_allclose(project(cam, [0.0, 0.0, 1.0]), [0.0, 0.0])


def test_project_linear_pinhole():
    cam = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
    assert_allclose(project(cam, [0.1, -0.2, 1.0]), [60.0, 30.0], atol=1e-12)


def test_project_radial_distortion():
    cam = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, k1=0.1, width=100, height=100)
    x = 0.1
    expected = 50.0 + 100.0 * x * (1.0 + 0.1 * x * x)
    assert_allclose(project(cam, [x, 0.0, 1.0])[0], expected, atol=1e-12)


def test_project_behind_camera_raises(intrinsics):
    with pytest.raises(BehindCameraError):
        project(intrinsics, [0.0, 0.0, -1.0])
    with pytest.raises(BehindCameraError):
        project(intrinsics, [0.0, 0.0, 0.0])


def test_projection_jacobians_match_finite_differences(rng):
    cam = CameraIntrinsics(fx=400.0, fy=410.0, cx=300.0, cy=200.0, k1=-0.1, k2=0.02, width=640, height=480)
    points = np.column_stack([rng.uniform(-1, 1, (10, 2)), rng.uniform(2, 5, 10)])
    j_point, j_intr = projection_jacobians(cam, points)
    h = 1e-6
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        numeric = (project_points(cam, points + step) - project_points(cam, points - step)) / (2 * h)
        assert_allclose(j_point[:, :, k], numeric, rtol=1e-5, atol=1e-5)
    params = cam.params()
    for k in range(6):
        step = np.zeros(6)
        step[k] = h
        numeric = (project_points(cam.with_params(params + step), points)
                   - project_points(cam.with_params(params - step), points)) / (2 * h)
        assert_allclose(j_intr[:, :, k], numeric, rtol=1e-5, atol=1e-5)


def test_unproject_inverts_distorted_projection():
    cam = CameraIntrinsics(fx=400.0, fy=400.0, cx=320.0, cy=240.0, k1=-0.2, k2=0.05, width=640, height=480)
    point = np.array([0.3, -0.2, 2.5])
    pixel = project(cam, point)
    assert_allclose(unproject(cam, pixel, 2.5), point, atol=1e-9)
    ray = bearing_vectors(cam, pixel[None])[0]
    assert_allclose(ray, point / np.linalg.norm(point), atol=1e-9)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1.0, fy=1.0, cx=20.0, cy=0.0, width=10, height=10)
