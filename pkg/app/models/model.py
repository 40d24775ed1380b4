from collections.abc import Callable
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from app.core.exceptions import ConfigurationError
from app.models.grids import KGrid

RealFn = Callable[[NDArray[np.float64]], NDArray[np.float64]]


class FormFactorPreset(str, Enum):
    GAUSSIAN = "gaussian"
    COMPACT = "compact"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Dispersion:
    m_f: float

    def __post_init__(self) -> None:
        if not self.m_f > 0:
            raise ConfigurationError(f"field mass m_f must be positive, got {self.m_f}")

    def evaluate(self, k: NDArray[np.float64] | float) -> NDArray[np.float64]:
        return np.sqrt(np.square(k) + self.m_f**2)


@dataclass(frozen=True, eq=False)
class FormFactor:
    """Real coupling profile χ sampled on a k-grid.

    `profile` is kept when the values come from an analytic preset so the
    profile can be re-sampled on a wider or finer grid.
    """

    values: NDArray[np.float64]
    preset: FormFactorPreset
    profile: RealFn | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if np.iscomplexobj(vals):
            raise ConfigurationError("form factor must be real-valued")
        object.__setattr__(self, "values", vals.astype(float))

    def resample(self, kgrid: KGrid) -> "FormFactor":
        if self.profile is None:
            raise ConfigurationError("custom form factor without a profile cannot be resampled")
        return FormFactor(values=self.profile(kgrid.points), preset=self.preset, profile=self.profile)


@dataclass(frozen=True, eq=False)
class Potential:
    """External potential V on R^{dn} with the sup-norm constants of its derivatives."""

    name: str
    value: Callable[[NDArray[np.float64]], float]
    gradient: Callable[[NDArray[np.float64]], NDArray[np.float64]]
    hessian: Callable[[NDArray[np.float64]], NDArray[np.float64]]
    sup_norm: float
    gradient_bound: float
    hessian_bound: float
    pointwise: RealFn | None = None


@dataclass(frozen=True, eq=False)
class ModelConfig:
    masses: tuple[float, ...]
    relativistic: bool
    dispersion: Dispersion
    form_factor: FormFactor
    potential: Potential
    kgrid: KGrid
    sigma: float = 0.5
    dimension: int = 1

    def __post_init__(self) -> None:
        if self.dimension != 1:
            raise ConfigurationError(f"only dimension=1 is supported, got {self.dimension}")
        if len(self.masses) < 1:
            raise ConfigurationError("at least one particle is required")
        if any(m <= 0 for m in self.masses):
            raise ConfigurationError(f"particle masses must be positive, got {self.masses}")
        if not 0.5 <= self.sigma <= 1.0:
            raise ConfigurationError(f"sigma must lie in [1/2, 1], got {self.sigma}")
        if self.form_factor.values.shape != (self.kgrid.size,):
            raise ConfigurationError("form factor is not sampled on the model k-grid")

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def mass_array(self) -> NDArray[np.float64]:
        return np.asarray(self.masses, dtype=float)

    @property
    def omega(self) -> NDArray[np.float64]:
        return self.dispersion.evaluate(self.kgrid.points)

    @property
    def coupling(self) -> NDArray[np.float64]:
        """χ/√ω on the grid."""
        return self.form_factor.values / np.sqrt(self.omega)

    def kinetic(self, p: NDArray[np.float64]) -> NDArray[np.float64]:
        """f_j(p_j) per particle."""
        m = self.mass_array
        if self.relativistic:
            return np.sqrt(np.square(p) + m**2)
        return np.square(p) / (2.0 * m)

    def kinetic_gradient(self, p: NDArray[np.float64]) -> NDArray[np.float64]:
        m = self.mass_array
        if self.relativistic:
            return p / np.sqrt(np.square(p) + m**2)
        return p / m

    def with_kgrid(self, kgrid: KGrid, form_factor: FormFactor) -> "ModelConfig":
        return replace(self, kgrid=kgrid, form_factor=form_factor)

    def restrict_modes(self, count: int) -> "ModelConfig":
        """The same model on the `count` central k-points (the quantum mode set)."""
        idx = self.kgrid.central_indices(count)
        ff = FormFactor(
            values=self.form_factor.values[idx].copy(),
            preset=self.form_factor.preset,
            profile=self.form_factor.profile,
        )
        return self.with_kgrid(KGrid(points=self.kgrid.points[idx].copy(), weight=self.kgrid.weight), ff)
