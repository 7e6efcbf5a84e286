"""
Exception hierarchy shared by every trajforge module.

Three families map onto the CLI exit codes: ConfigError (1), DataError (2)
and NumericalError (3).
"""

from typing import Optional, Tuple


class TrajforgeError(Exception):
    """Base class for all trajforge errors."""


class ConfigError(TrajforgeError):
    """Invalid or unknown configuration."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class DataError(TrajforgeError):
    """Invalid input data, optionally located in a file."""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(self._format(message))

    def _format(self, message: str) -> str:
        if self.path is None:
            return message
        location = str(self.path)
        if self.line is not None:
            location += f":{self.line}"
        if self.column is not None:
            location += f":{self.column}"
        return f"{location}: {message}"


class NumericalError(TrajforgeError):
    """A numerical procedure could not produce a valid result."""


class IllConditionedLogError(NumericalError):
    """SE(3) logarithm requested for a rotation angle at pi."""


class BehindCameraError(NumericalError):
    """Point at or behind the camera plane."""


class OutOfDomainError(DataError):
    """Timestamp outside a valid evaluation interval."""

    def __init__(self, message: str, interval: Tuple[float, float]):
        super().__init__(f"{message} (valid interval [{interval[0]}, {interval[1]}))")
        self.interval = interval


class InsufficientSamplesError(DataError):
    """Not enough samples for a fit or estimate."""


class NonMonotonicTimestampsError(DataError):
    """Timestamps are not strictly increasing."""


class CoverageError(DataError):
    """Odometry does not cover the requested time span."""


class NoOverlapError(NumericalError):
    """ICP found no correspondence under the distance bound."""


class DegenerateGeometryError(NumericalError):
    """Point configuration does not determine a rigid transform."""


class GraphError(DataError):
    """Pose graph violates a structural precondition."""


class DisconnectedGraphError(GraphError):
    """The pose graph has more than one connected component."""


class NoFixedNodeError(GraphError):
    """The pose graph has no gauge-fixed node."""


class NonSpdInformationError(GraphError):
    """An edge information matrix is not symmetric positive-definite."""


class DisconnectedMergeError(GraphError):
    """A sequence has no cross-sequence edge to the other sequences."""

    def __init__(self, sequence_id: str):
        super().__init__(f"sequence '{sequence_id}' has no cross-sequence edge to the merged graph")
        self.sequence_id = sequence_id


class NormalEquationError(NumericalError):
    """The damped normal equations could not be solved."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class EmptyProblemError(DataError):
    """Nothing left to optimize."""


class InsufficientMatchesError(DataError):
    """Too few 2D-3D matches for absolute pose estimation."""
