import numpy as np
import pytest

from app.core.config import ClassicalSection, GridSection, QuantumSection, Settings, SweepSection, VerifySection
from app.models import ClassicalState, Dispersion, KGrid, ModelConfig, ParticleGrid
from app.services.fock_space import FockBasis
from app.services.model_core import gaussian_well, make_form_factor, zero_potential
from app.services.nelson import assemble_hamiltonian


def build_model(
    amplitude: float = 0.5,
    k_max: float = 4.0,
    k_points: int = 17,
    relativistic: bool = True,
    masses: tuple[float, ...] = (1.0,),
    potential: str = "gaussian_well",
    m_f: float = 1.0,
) -> ModelConfig:
    """Small model for tests; gaussian form factor of the given amplitude."""
    kgrid = KGrid.symmetric(k_max, k_points)
    dispersion = Dispersion(m_f)
    n = len(masses)
    pot = gaussian_well(1.0, 1.0, n) if potential == "gaussian_well" else zero_potential(n)
    return ModelConfig(
        masses=masses,
        relativistic=relativistic,
        dispersion=dispersion,
        form_factor=make_form_factor("gaussian", kgrid, dispersion, amplitude=amplitude, cutoff=2.0),
        potential=pot,
        kgrid=kgrid,
    )


def random_state(rng: np.random.Generator, cfg: ModelConfig, scale: float = 1.0) -> ClassicalState:
    k = cfg.kgrid.size
    return ClassicalState(
        scale * rng.standard_normal(cfg.n),
        scale * rng.uniform(-2.0, 2.0, cfg.n),
        0.5 * scale * (rng.standard_normal(k) + 1j * rng.standard_normal(k)),
    )


@pytest.fixture
def rng():
    """Seeded generator so randomized tests are reproducible"""
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def model_cfg():
    """Semi-relativistic single particle in a gaussian well, gaussian form factor"""
    return build_model()


@pytest.fixture(scope="session")
def decoupled_cfg():
    """Same model with the form factor switched off and no potential"""
    return build_model(amplitude=0.0, potential="zero")


@pytest.fixture(scope="session")
def quantum_cfg():
    """Weak coupling on the three central modes of a 33-point grid"""
    return build_model(amplitude=0.1, k_points=33).restrict_modes(3)


@pytest.fixture(scope="session")
def pgrid():
    return ParticleGrid(32, 10.0)


@pytest.fixture(scope="session")
def fbasis():
    return FockBasis(3, 4)


@pytest.fixture(scope="session")
def assembly(quantum_cfg, pgrid, fbasis):
    """Nelson Hamiltonian at hbar=0.2 (dimension 32 * 35)"""
    return assemble_hamiltonian(quantum_cfg, pgrid, fbasis, 0.2)


@pytest.fixture(scope="session")
def u0_quantum(quantum_cfg):
    """Initial point used by the coherent-state tests"""
    k = quantum_cfg.kgrid.points
    return ClassicalState(np.array([0.5]), np.array([0.0]), 0.05 * np.exp(-0.5 * k**2).astype(complex))


@pytest.fixture
def small_settings():
    """Settings sized for quick end-to-end command runs"""
    return Settings(
        grid=GridSection(k_points=17, particle_points=32, quantum_modes=3, n_max=4),
        classical=ClassicalSection(horizon=1.0, dt=1e-2, save_stride=10, gronwall_horizon=0.5),
        quantum=QuantumSection(hbar=0.2, horizon=0.5, n_times=3),
        sweep=SweepSection(hbar_values=[0.4, 0.2], times=[0.25], classical_dt=1e-2, cloud_samples=8,
                           residual_time=0.2, residual_steps=[0.1, 0.05], pushforward_time=0.1),
        verify=VerifySection(samples=20, state_samples=5, pairs=2, horizon=0.5, n_times=3,
                             gronwall_horizon=0.5, gronwall_dt=1e-2),
    )
