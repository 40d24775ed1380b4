import configparser
import hashlib
import json
import logging
from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from app.core.exceptions import ConfigurationError
from app.models import ClassicalState, Dispersion, KGrid, ModelConfig, ParticleGrid
from app.services.fock_space import DEFAULT_LEAKAGE_THRESHOLD, FockBasis
from app.services.model_core import DEFAULT_CEILINGS, make_form_factor, make_potential

logger = logging.getLogger(__name__)


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[list[float], BeforeValidator(_split_list)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============================================================================
# SECTIONS
# ============================================================================

class ModelSection(_Section):
    n_particles: int = Field(1, ge=1)
    masses: FloatList = Field(default_factory=lambda: [1.0])
    relativistic: bool = True
    field_mass: float = Field(1.0, gt=0)
    sigma: float = Field(0.5, ge=0.5, le=1.0)
    dimension: int = Field(1, ge=1)


class GridSection(_Section):
    k_max: float = Field(4.0, gt=0)
    k_points: int = Field(33, ge=1)
    particle_points: int = Field(64, ge=2)
    box_length: float = Field(10.0, gt=0)
    quantum_modes: int = Field(3, ge=1)
    n_max: int = Field(4, ge=0)


class FormFactorSection(_Section):
    preset: Literal["gaussian", "compact", "custom"] = "gaussian"
    amplitude: float = 0.1
    cutoff: float = Field(2.0, gt=0)
    power: float = 0.0


class PotentialSection(_Section):
    preset: Literal["gaussian_well", "zero", "harmonic"] = "gaussian_well"
    depth: float = 1.0
    width: float = Field(1.0, gt=0)
    stiffness: float = 1.0


class InitialSection(_Section):
    momenta: FloatList = Field(default_factory=lambda: [0.5])
    positions: FloatList = Field(default_factory=lambda: [0.0])
    field_amplitude: float = 0.05
    field_phase: float = 0.0


class ClassicalSection(_Section):
    horizon: float = Field(10.0, ge=0)
    dt: float = Field(1e-3, gt=0)
    save_stride: int = Field(100, ge=1)
    picture: Literal["direct", "interaction"] = "direct"
    gronwall_horizon: float = Field(5.0, ge=0)
    perturbation: float = Field(1e-3, gt=0)


class QuantumSection(_Section):
    hbar: float = Field(0.1, gt=0, le=1)
    horizon: float = Field(2.0, ge=0)
    n_times: int = Field(9, ge=1)
    width_cells: float = Field(
        1.0,
        ge=0,
        description="Minimum gaussian width sqrt(hbar) in grid cells. The strict guard is 4 cells; "
        "the default grid (64 points on a box of 10) fails it at every hbar below 0.4, so the default is 1 cell",
    )
    leakage_threshold: float = Field(DEFAULT_LEAKAGE_THRESHOLD, gt=0)
    dense_threshold: int = Field(4096, ge=1)


class SweepSection(_Section):
    hbar_values: FloatList = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    times: FloatList = Field(default_factory=lambda: [0.5, 1.0])
    classical_dt: float = Field(1e-3, gt=0)
    panel_magnitude: float = Field(0.1, gt=0)
    cloud_samples: int = Field(512, ge=1)
    residual_time: float = Field(1.0, gt=0)
    residual_steps: FloatList = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    pushforward_time: float = Field(1.0, ge=0)

    @field_validator("hbar_values")
    @classmethod
    def _hbar_range(cls, values: list[float]) -> list[float]:
        if not values:
            raise ValueError("at least one hbar value is required")
        if any(not 0 < h <= 1 for h in values):
            raise ValueError(f"hbar values must lie in (0, 1], got {values}")
        return values


class VerifySection(_Section):
    samples: int = Field(1000, ge=1)
    state_samples: int = Field(200, ge=1)
    pairs: int = Field(100, ge=0)
    horizon: float = Field(2.0, gt=0)
    n_times: int = Field(9, ge=2)
    gronwall_horizon: float = Field(5.0, gt=0)
    gronwall_dt: float = Field(1e-2, gt=0)


class AssumptionsSection(_Section):
    omega_high_chi: float = Field(DEFAULT_CEILINGS["omega^(3/2-sigma) chi"], gt=0)
    omega_half_chi: float = Field(DEFAULT_CEILINGS["omega^(1/2) chi"], gt=0)
    omega_inverse_half_chi: float = Field(DEFAULT_CEILINGS["omega^(-1/2) chi"], gt=0)
    sup_v: float = Field(DEFAULT_CEILINGS["sup V"], gt=0)
    sup_grad_v: float = Field(DEFAULT_CEILINGS["sup grad V"], gt=0)
    sup_hess_v: float = Field(DEFAULT_CEILINGS["sup hess V"], gt=0)


class RunSection(_Section):
    seed: int = 0
    max_workers: int = 1
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value


# ============================================================================
# SETTINGS
# ============================================================================

class Settings(BaseSettings):
    """Lab settings; only explicit values (a config file or keyword arguments) are read"""

    model_config = SettingsConfigDict(extra="forbid")

    model: ModelSection = Field(default_factory=ModelSection)
    grid: GridSection = Field(default_factory=GridSection)
    formfactor: FormFactorSection = Field(default_factory=FormFactorSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    classical: ClassicalSection = Field(default_factory=ClassicalSection)
    quantum: QuantumSection = Field(default_factory=QuantumSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    verify: VerifySection = Field(default_factory=VerifySection)
    assumptions: AssumptionsSection = Field(default_factory=AssumptionsSection)
    run: RunSection = Field(default_factory=RunSection)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    def __init__(self, **kwargs: Any):
        super().__init__(**kwargs)
        self._validate_settings()

    def _validate_settings(self) -> None:
        """Validate configuration settings"""

        n = self.model.n_particles
        for section, key in (("model", "masses"), ("initial", "momenta"), ("initial", "positions")):
            values = getattr(getattr(self, section), key)
            if len(values) == 1 and n > 1:
                logger.warning(f"[{section}] {key} has one entry for {n} particles. Repeating it.")
                setattr(getattr(self, section), key, values * n)
            elif len(values) != n:
                raise ConfigurationError(f"[{section}] {key}: expected {n} values, got {len(values)}")

        if self.model.dimension != 1:
            raise ConfigurationError(f"[model] dimension: only 1 is supported, got {self.model.dimension}")

        if (self.grid.k_points - self.grid.quantum_modes) % 2 or self.grid.quantum_modes > self.grid.k_points:
            raise ConfigurationError(
                f"[grid] quantum_modes: {self.grid.quantum_modes} central modes cannot be taken "
                f"from k_points={self.grid.k_points}")

        hbars = self.sweep.hbar_values
        if sorted(set(hbars), reverse=True) != hbars:
            logger.warning("[sweep] hbar_values must be strictly decreasing. Sorting them.")
            self.sweep.hbar_values = sorted(set(hbars), reverse=True)
        if len(self.sweep.hbar_values) == 1:
            logger.warning("[sweep] hbar_values has a single entry; monotonicity will be unassessable.")

        if self.run.max_workers <= 0:
            logger.warning("[run] max_workers must be positive. Setting to 1.")
            self.run.max_workers = 1

    def config_hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the sorted JSON dump."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def build_model_config(self) -> ModelConfig:
        """Classical model on the full k-grid."""
        kgrid = KGrid.symmetric(self.grid.k_max, self.grid.k_points)
        dispersion = Dispersion(self.model.field_mass)
        ff = self.formfactor
        pot = self.potential
        return ModelConfig(
            masses=tuple(self.model.masses),
            relativistic=self.model.relativistic,
            dispersion=dispersion,
            form_factor=make_form_factor(ff.preset, kgrid, dispersion, ff.amplitude, ff.cutoff, ff.power),
            potential=make_potential(pot.preset, self.model.n_particles, pot.depth, pot.width, pot.stiffness),
            kgrid=kgrid,
            sigma=self.model.sigma,
            dimension=self.model.dimension,
        )

    def build_quantum_config(self) -> ModelConfig:
        """The model restricted to the central `quantum_modes` k-points."""
        return self.build_model_config().restrict_modes(self.grid.quantum_modes)

    def build_particle_grid(self) -> ParticleGrid:
        return ParticleGrid(self.grid.particle_points, self.grid.box_length)

    def build_fock_basis(self) -> FockBasis:
        return FockBasis(self.grid.quantum_modes, self.grid.n_max)

    def initial_state(self, cfg: ModelConfig) -> ClassicalState:
        """u₀ on the grid of `cfg`, with α₀(k) = a e^{iφ} e^{-k²/2}."""
        init = self.initial
        k = cfg.kgrid.points
        alpha = init.field_amplitude * np.exp(1j * init.field_phase) * np.exp(-0.5 * np.square(k))
        return ClassicalState(np.array(init.momenta), np.array(init.positions), alpha)

    def ceilings(self) -> dict[str, float]:
        a = self.assumptions
        return {
            "omega^(3/2-sigma) chi": a.omega_high_chi,
            "omega^(1/2) chi": a.omega_half_chi,
            "omega^(-1/2) chi": a.omega_inverse_half_chi,
            "sup V": a.sup_v,
            "sup grad V": a.sup_grad_v,
            "sup hess V": a.sup_hess_v,
        }


def load_settings(path: str | Path) -> Settings:
    """Read an INI configuration file into `Settings`.

    Parse errors name the offending line, validation errors the `[section] key`.
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError as e:
        raise ConfigurationError(f"configuration file {path} not found") from e
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        if line is None and isinstance(e, configparser.ParsingError) and e.errors:
            line = e.errors[0][0]
        where = f"{path}:{line}" if line is not None else str(path)
        raise ConfigurationError(f"{where}: {e.message}") from e

    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    unknown = sorted(set(raw) - set(Settings.model_fields))
    if unknown:
        raise ConfigurationError(f"{path}: unknown section [{unknown[0]}]")
    try:
        return Settings(**raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [str(part) for part in first["loc"]]
        key = f"[{loc[0]}] {'.'.join(loc[1:])}" if len(loc) > 1 else f"[{loc[0]}]"
        raise ConfigurationError(f"{path}: {key}: {first['msg']}") from e


settings = Settings()


__all__ = ["settings", "Settings", "load_settings"]
