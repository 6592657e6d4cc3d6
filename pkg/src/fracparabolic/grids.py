"""Uniform spatial grids shared by the kernel, Levi and oracle modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-L, L)^n with M points per axis (spacing 2L/M)."""

    n: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("grid dimension must be positive")
        if not self.half_width > 0:
            raise ConfigurationError("grid half_width must be positive")
        if self.points_per_axis < 2 or self.points_per_axis % 2:
            raise ConfigurationError("points_per_axis must be even and >= 2")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @property
    def size(self) -> int:
        return self.points_per_axis**self.n

    def points(self) -> np.ndarray:
        """Grid points as an array of shape (M^n, n), axis 0 varying slowest."""
        axes = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def frequencies(self) -> np.ndarray:
        """Dual lattice along one axis in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def to_dict(self) -> dict:
        return {"n": self.n, "half_width": self.half_width, "points_per_axis": self.points_per_axis}
