from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from app.core.exceptions import ShapeError

Picture = Literal["direct", "interaction"]


@dataclass(eq=False)
class ClassicalState:
    """u = (p, q, α). Also used for tangent vectors of the same shape."""

    __array_ufunc__ = None

    p: NDArray[np.float64]
    q: NDArray[np.float64]
    alpha: NDArray[np.complex128]

    def __post_init__(self) -> None:
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=complex))
        if self.p.shape != self.q.shape:
            raise ShapeError(f"p has shape {self.p.shape}, q has shape {self.q.shape}")

    @classmethod
    def zeros(cls, n: int, n_modes: int) -> "ClassicalState":
        return cls(p=np.zeros(n), q=np.zeros(n), alpha=np.zeros(n_modes, dtype=complex))

    def _check(self, other: "ClassicalState") -> None:
        if self.p.shape != other.p.shape or self.alpha.shape != other.alpha.shape:
            raise ShapeError("states live on different grids")

    def __add__(self, other: "ClassicalState") -> "ClassicalState":
        self._check(other)
        return ClassicalState(self.p + other.p, self.q + other.q, self.alpha + other.alpha)

    def __sub__(self, other: "ClassicalState") -> "ClassicalState":
        self._check(other)
        return ClassicalState(self.p - other.p, self.q - other.q, self.alpha - other.alpha)

    def __mul__(self, scalar: float) -> "ClassicalState":
        return ClassicalState(scalar * self.p, scalar * self.q, scalar * self.alpha)

    __rmul__ = __mul__

    def copy(self) -> "ClassicalState":
        return ClassicalState(self.p.copy(), self.q.copy(), self.alpha.copy())

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.alpha))
        )


@dataclass(eq=False)
class Trajectory:
    """Direct-picture states every stride steps and at the horizon; `picture` records the integration route."""

    times: NDArray[np.float64]
    states: list[ClassicalState]
    picture: Picture = "direct"

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ShapeError("one state per time is required")
        if len(self.times) and self.times[0] != 0.0:
            raise ShapeError("trajectories start at t=0")

    @property
    def final(self) -> ClassicalState:
        return self.states[-1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self) -> int:
        return len(self.states)


@dataclass(eq=False)
class TestPoint:
    """ξ = (p₀, q₀, α₀) on the quantum mode set."""

    __test__ = False

    p0: NDArray[np.float64]
    q0: NDArray[np.float64]
    alpha0: NDArray[np.complex128]
    label: str = ""

    def __post_init__(self) -> None:
        self.p0 = np.atleast_1d(np.asarray(self.p0, dtype=float))
        self.q0 = np.atleast_1d(np.asarray(self.q0, dtype=float))
        self.alpha0 = np.atleast_1d(np.asarray(self.alpha0, dtype=complex))

    @classmethod
    def zero(cls, n: int, n_modes: int) -> "TestPoint":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n_modes, dtype=complex), label="zero")

    def as_state(self) -> ClassicalState:
        return ClassicalState(self.p0.copy(), self.q0.copy(), self.alpha0.copy())


@dataclass(eq=False)
class QuantumState:
    """Coefficients over (particle grid)^n ⊗ (Fock basis), stored as shape (P, D)."""

    coefficients: NDArray[np.complex128]
    hbar: float
    n_particles: int = 1
    grid_points: int = field(default=0)

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.ndim != 2:
            raise ShapeError("quantum coefficients must be a (particle, fock) matrix")
        if self.grid_points == 0:
            self.grid_points = round(self.coefficients.shape[0] ** (1.0 / self.n_particles))
        if self.grid_points**self.n_particles != self.coefficients.shape[0]:
            raise ShapeError("particle dimension is not grid_points ** n_particles")

    @property
    def vector(self) -> NDArray[np.complex128]:
        return self.coefficients.reshape(-1)

    @property
    def tensor(self) -> NDArray[np.complex128]:
        """View with one axis per particle followed by the Fock axis."""
        shape = (self.grid_points,) * self.n_particles + (self.coefficients.shape[1],)
        return self.coefficients.reshape(shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def with_coefficients(self, coefficients: NDArray[np.complex128]) -> "QuantumState":
        return QuantumState(
            coefficients=np.asarray(coefficients).reshape(self.coefficients.shape),
            hbar=self.hbar,
            n_particles=self.n_particles,
            grid_points=self.grid_points,
        )
