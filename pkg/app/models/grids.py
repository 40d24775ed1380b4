from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from app.core.exceptions import ConfigurationError, ShapeError

_SPACING_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class KGrid:
    """Symmetric uniform wavenumber grid; k-integrals become Δk-weighted sums."""

    points: NDArray[np.float64]
    weight: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size == 0:
            raise ConfigurationError("k-grid must be a non-empty 1-d array")
        if self.weight <= 0:
            raise ConfigurationError(f"k-grid weight must be positive, got {self.weight}")
        if pts.size > 1:
            steps = np.diff(pts)
            if np.any(steps <= 0):
                raise ConfigurationError("k-grid points must be strictly increasing")
            if not np.allclose(steps, self.weight, rtol=_SPACING_RTOL, atol=0.0):
                raise ConfigurationError("k-grid weight must equal the common spacing")
        if not np.allclose(pts, -pts[::-1], rtol=0.0, atol=_SPACING_RTOL * max(1.0, abs(pts).max())):
            raise ConfigurationError("k-grid must be symmetric about 0")

    @classmethod
    def symmetric(cls, k_max: float, n_points: int) -> "KGrid":
        if n_points < 1:
            raise ConfigurationError(f"k_points must be >= 1, got {n_points}")
        if n_points == 1:
            # a single mode at k=0 still needs a quadrature weight
            return cls(points=np.zeros(1), weight=2.0 * k_max if k_max > 0 else 1.0)
        if k_max <= 0:
            raise ConfigurationError(f"k_max must be positive, got {k_max}")
        pts = np.linspace(-k_max, k_max, n_points)
        return cls(points=pts, weight=float(pts[1] - pts[0]))

    @property
    def size(self) -> int:
        return int(self.points.size)

    def central_indices(self, count: int) -> NDArray[np.int64]:
        if count < 1 or count > self.size:
            raise ConfigurationError(
                f"cannot keep {count} modes from a grid of {self.size} points")
        if (self.size - count) % 2:
            raise ConfigurationError(
                f"quantum_modes={count} must have the same parity as k_points={self.size}")
        start = (self.size - count) // 2
        return np.arange(start, start + count)

    def restrict_central(self, count: int) -> "KGrid":
        idx = self.central_indices(count)
        return KGrid(points=self.points[idx].copy(), weight=self.weight)

    def check_field(self, alpha: NDArray[np.complex128]) -> None:
        if np.shape(alpha) != (self.size,):
            raise ShapeError(
                f"field has shape {np.shape(alpha)}, grid has {self.size} points")


@dataclass(frozen=True, eq=False)
class ParticleGrid:
    """Periodic position grid on [-L/2, L/2) used for every particle coordinate."""

    n_points: int
    length: float
    x: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ConfigurationError(f"particle_points must be a power of two, got {n}")
        if self.length <= 0:
            raise ConfigurationError(f"box_length must be positive, got {self.length}")
        object.__setattr__(self, "x", -0.5 * self.length + self.spacing * np.arange(n))

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @property
    def wavenumbers(self) -> NDArray[np.float64]:
        """Angular wavenumbers 2πm/L in FFT order, nearest-to-zero representative."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    def momenta(self, hbar: float) -> NDArray[np.float64]:
        return hbar * self.wavenumbers
