import numpy as np


class CauchyLoss:
    """rho(s) = c^2 log(1 + s / c^2) on squared residual norms s."""

    def __init__(self, scale: float):
        if scale <= 0:
            raise ValueError("Cauchy scale must be positive")
        self.scale = float(scale)

    def rho(self, s: np.ndarray) -> np.ndarray:
        c2 = self.scale * self.scale
        return c2 * np.log1p(np.asarray(s, dtype=float) / c2)

    def weight(self, s: np.ndarray) -> np.ndarray:
        """rho'(s): the iteratively-reweighted least-squares weight."""
        c2 = self.scale * self.scale
        return 1.0 / (1.0 + np.asarray(s, dtype=float) / c2)


class SquaredLoss:
    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def rho(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s, dtype=float)

    def weight(self, s: np.ndarray) -> np.ndarray:
        return np.ones_like(np.asarray(s, dtype=float))
