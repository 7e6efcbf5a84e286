"""
Localization accuracy: per-query pose errors and the fraction of queries
localized within nested (position, orientation) thresholds.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.errors import ConfigError, DataError
from src.geometry.se3 import Se3Pose
from src.utils import format_markdown_table

DEFAULT_THRESHOLDS: Tuple[Tuple[float, float], ...] = ((0.1, 1.0), (0.25, 2.0), (1.0, 5.0))


class PoseError(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: float = Field(..., ge=0, description="Position error (m)")
    angle: float = Field(..., ge=0, le=180, description="Orientation error (deg)")


def pose_error(est: Se3Pose, gt: Se3Pose) -> PoseError:
    """Distance between positions and the rotation angle of R_gt^T R_est in degrees."""
    position = float(np.linalg.norm(est.translation - gt.translation))
    angle = float(np.degrees(gt.inverse().compose(est).angle()))
    return PoseError(position=position, angle=min(angle, 180.0))


def _column(position: float) -> str:
    return f"localized_{float(position)}"


@dataclass
class AccuracyReport:
    thresholds: List[Tuple[float, float]]
    fractions: List[float]
    errors: Dict[str, Optional[PoseError]] = field(default_factory=dict)
    unlocalized: int = 0

    def passes(self, query_id: str) -> List[bool]:
        error = self.errors.get(query_id)
        if error is None:
            return [False] * len(self.thresholds)
        return [error.position <= t_pos and error.angle <= t_ang for t_pos, t_ang in self.thresholds]

    def to_frame(self) -> pd.DataFrame:
        """One row per query: query_id, pos_err_m, ang_err_deg and one localized_<T> column per threshold."""
        rows = []
        for query_id in sorted(self.errors):
            error = self.errors[query_id]
            row = {
                "query_id": query_id,
                "pos_err_m": np.inf if error is None else error.position,
                "ang_err_deg": np.inf if error is None else error.angle,
            }
            for (t_pos, _), ok in zip(self.thresholds, self.passes(query_id)):
                row[_column(t_pos)] = int(ok)
            rows.append(row)
        columns = ["query_id", "pos_err_m", "ang_err_deg"] + [_column(t) for t, _ in self.thresholds]
        return pd.DataFrame(rows, columns=columns)

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "threshold": [f"({t_pos:g} m, {t_ang:g} deg)" for t_pos, t_ang in self.thresholds],
            "localized": [f"{100.0 * f:.1f}%" for f in self.fractions],
        })

    def to_text(self) -> str:
        text = format_markdown_table(self.summary_frame())
        return text + f"\n\nqueries: {len(self.errors)}, unlocalized: {self.unlocalized}"


def _check_nested(thresholds: Sequence[Tuple[float, float]]) -> None:
    for (p0, a0), (p1, a1) in zip(thresholds, thresholds[1:]):
        if p1 < p0 or a1 < a0:
            raise ConfigError(f"accuracy thresholds must be nested from high to low accuracy: {list(thresholds)}",
                              key="thresholds")


def evaluate(
    estimates: Mapping[str, Optional[Se3Pose]],
    ground_truth: Mapping[str, Se3Pose],
    thresholds: Sequence[Tuple[float, float]] = DEFAULT_THRESHOLDS,
) -> AccuracyReport:
    """
    Fraction of queries localized within each (meters, degrees) threshold.

    Args:
        estimates: Estimated camera poses by query id; None or a missing id counts as not localized
        ground_truth: True camera poses by query id
        thresholds: Nested thresholds from high to low accuracy

    Returns:
        AccuracyReport over all ground-truth queries

    Raises:
        DataError: an estimate names a query without ground truth
    """
    thresholds = [(float(p), float(a)) for p, a in thresholds]
    _check_nested(thresholds)
    unknown = sorted(set(estimates) - set(ground_truth))
    if unknown:
        raise DataError(f"{len(unknown)} estimate(s) without ground truth, first '{unknown[0]}'")

    errors: Dict[str, Optional[PoseError]] = {}
    for query_id, gt in ground_truth.items():
        est = estimates.get(query_id)
        errors[query_id] = None if est is None else pose_error(est, gt)
    report = AccuracyReport(thresholds, [0.0] * len(thresholds), errors,
                            unlocalized=sum(1 for e in errors.values() if e is None))
    if errors:
        counts = np.zeros(len(thresholds), dtype=int)
        for query_id in errors:
            counts += np.array(report.passes(query_id), dtype=int)
        report.fractions = [float(c) / len(errors) for c in counts]
    if any(b < a for a, b in zip(report.fractions, report.fractions[1:])):
        raise AssertionError(f"accuracy fractions are not monotonic: {report.fractions}")
    return report


def accuracy_curve(errors: Iterable[Optional[PoseError]], max_position: float = 1.0,
                   steps: int = 100) -> pd.DataFrame:
    """
    Fraction localized for thresholds (d m, 10*d deg) with d from max_position/steps to max_position,
    i.e. the angle threshold in degrees equals the position threshold in centimetres divided by ten.
    """
    errors = list(errors)
    positions = np.linspace(max_position / steps, max_position, steps)
    pos = np.array([np.inf if e is None else e.position for e in errors])
    ang = np.array([np.inf if e is None else e.angle for e in errors])
    fractions = []
    for d in positions:
        ok = (pos <= d) & (ang <= 10.0 * d)
        fractions.append(float(ok.mean()) if len(errors) else 0.0)
    return pd.DataFrame({"position_m": positions, "angle_deg": 10.0 * positions, "fraction": fractions})


def evaluate_subsets(
    estimates: Mapping[str, Optional[Se3Pose]],
    ground_truth: Mapping[str, Se3Pose],
    labels: Set[str],
    thresholds: Sequence[Tuple[float, float]] = DEFAULT_THRESHOLDS,
) -> Tuple[AccuracyReport, AccuracyReport]:
    """Reports for the labelled queries and for the rest."""
    inside = {k: v for k, v in ground_truth.items() if k in labels}
    outside = {k: v for k, v in ground_truth.items() if k not in labels}
    return (evaluate({k: v for k, v in estimates.items() if k in inside}, inside, thresholds),
            evaluate({k: v for k, v in estimates.items() if k in outside}, outside, thresholds))
