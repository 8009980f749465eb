"""Uniform time grid for all trajectory quantities."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretization of [0, horizon] into ``steps`` intervals.

    Rounding convention: ``dt = horizon / steps`` in float64 and knots are
    ``i * dt``; the last knot ``steps * dt`` is treated as the horizon even
    when it differs from it by a rounding ulp.
    """

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 2:
            raise ConfigError(f"need at least 2 steps, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def n_knots(self) -> int:
        return self.steps + 1

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def refined(self, factor: int) -> "TimeGrid":
        """Same horizon with ``factor`` times more steps."""
        return TimeGrid(self.horizon, self.steps * factor)
