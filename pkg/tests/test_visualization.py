import base64

import numpy as np
import pandas as pd

from src.geometry.se3 import Se3Pose
from src.localize.evaluate import accuracy_curve
from src.visualization import plot_accuracy_curve, plot_reprojection_histogram, plot_trajectories, trajectory_frame

PNG = b"\x89PNG"


def test_trajectory_frame():
    poses = {"seq0": [(0, Se3Pose.identity()), (500_000_000, Se3Pose(translation=(1.0, 2.0, 0.0)))]}
    frame = trajectory_frame(poses, "estimate")
    assert frame[["t", "x", "y"]].to_numpy().tolist() == [[0.0, 0.0, 0.0], [0.5, 1.0, 2.0]]
    assert set(frame["source"]) == {"estimate"}


def test_plots_return_base64_png():
    poses = {"seq0": [(k * 10**9, Se3Pose(translation=(float(k), 0.0, 0.0))) for k in range(5)]}
    walls = np.array([[0.0, -1.0, 4.0, -1.0]])
    encoded = plot_trajectories(poses, poses, walls)
    assert base64.b64decode(encoded).startswith(PNG)
    assert base64.b64decode(plot_reprojection_histogram(np.abs(np.random.default_rng(0).normal(size=200)))) \
        .startswith(PNG)


def test_plots_write_to_path(tmp_path):
    curve = accuracy_curve([None])
    path = tmp_path / "curve.png"
    assert plot_accuracy_curve(curve, path=str(path)) == str(path)
    assert path.read_bytes().startswith(PNG)


def test_nothing_to_draw():
    assert plot_trajectories({}) is None
    assert plot_accuracy_curve(pd.DataFrame()) is None
    assert plot_reprojection_histogram(np.array([np.inf])) is None
