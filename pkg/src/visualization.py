"""
Chart generation for trajectories, localization accuracy and reprojection errors.

Every chart is returned as a base64 encoded PNG, or written to a path when one is given.
"""

import base64
from io import BytesIO
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from src.geometry.se3 import Se3Pose


def _finish(path: Optional[str]) -> Optional[str]:
    """Save the current figure to path, or return it base64 encoded."""
    plt.tight_layout()
    try:
        if path is not None:
            plt.savefig(path, format="png")
            return path
        buffer = BytesIO()
        plt.savefig(buffer, format="png")
        buffer.seek(0)
        return base64.b64encode(buffer.read()).decode("utf-8")
    finally:
        plt.close()


def trajectory_frame(trajectories: Dict[str, Sequence[Tuple[int, Se3Pose]]], source: str) -> pd.DataFrame:
    rows = []
    for sequence_id, poses in trajectories.items():
        for stamp, pose in poses:
            rows.append({"source": source, "sequence": sequence_id, "t": stamp / 1e9,
                         "x": pose.translation[0], "y": pose.translation[1]})
    return pd.DataFrame(rows, columns=["source", "sequence", "t", "x", "y"])


def plot_trajectories(estimated: Dict[str, Sequence[Tuple[int, Se3Pose]]],
                      ground_truth: Optional[Dict[str, Sequence[Tuple[int, Se3Pose]]]] = None,
                      walls: Optional[np.ndarray] = None, path: Optional[str] = None) -> Optional[str]:
    """
    Top-down overlay of estimated (and optionally ground-truth) platform trajectories.

    Args:
        estimated: Timestamped poses per sequence
        ground_truth: Optional reference poses per sequence
        walls: Optional (N, 4) wall segments x0 y0 x1 y1
        path: Write the PNG here instead of returning base64

    Returns:
        Base64 string, the path written, or None when there is nothing to draw
    """
    frames = [trajectory_frame(estimated, "estimate")]
    if ground_truth:
        frames.append(trajectory_frame(ground_truth, "ground truth"))
    df = pd.concat(frames, ignore_index=True)
    if df.empty:
        return None

    plt.figure(figsize=(8, 8))
    if walls is not None:
        for x0, y0, x1, y1 in np.asarray(walls).reshape(-1, 4):
            plt.plot([x0, x1], [y0, y1], color="0.3", linewidth=1)
    sns.lineplot(data=df, x="x", y="y", hue="sequence", style="source", sort=False, estimator=None)
    plt.axis("equal")
    plt.xlabel("x (m)")
    plt.ylabel("y (m)")
    plt.title("Platform trajectories")
    return _finish(path)


def plot_accuracy_curve(curve: pd.DataFrame, labels: Optional[List[str]] = None,
                        path: Optional[str] = None) -> Optional[str]:
    """
    Fraction of localized queries against the coupled position/angle threshold.

    `curve` holds position_m, angle_deg and fraction columns; an optional `label`
    column draws one line per subset.
    """
    if curve is None or curve.empty:
        return None
    plt.figure(figsize=(8, 5))
    hue = "label" if "label" in curve.columns else None
    sns.lineplot(data=curve, x="position_m", y="fraction", hue=hue, hue_order=labels)
    plt.ylim(0.0, 1.0)
    plt.xlabel("position threshold (m), angle threshold = 10 deg/m")
    plt.ylabel("localized fraction")
    plt.title("Localization accuracy")
    return _finish(path)


def plot_reprojection_histogram(errors: np.ndarray, bins: int = 50,
                                path: Optional[str] = None) -> Optional[str]:
    errors = np.asarray(errors, dtype=float)
    errors = errors[np.isfinite(errors)]
    if errors.size == 0:
        return None
    plt.figure(figsize=(8, 5))
    sns.histplot(errors, bins=bins)
    plt.xlabel("reprojection error (px)")
    plt.title(f"Reprojection errors (mean {errors.mean():.3f} px)")
    return _finish(path)
