import numpy as np
import pytest
from conftest import build_model, random_state

from app.core.exceptions import ConfigurationError, NumericalConsistencyError, ShapeError
from app.models import ClassicalState, Dispersion, KGrid, ModelConfig
from app.services.model_core import (
    check_assumptions,
    grad_I,
    gradient_bound,
    gradient_lipschitz_bound,
    hamiltonian_classical,
    harmonic_potential,
    interaction_I,
    make_form_factor,
    omega_eval,
    real_part,
    xsigma_norm,
    zero_potential,
)


@pytest.mark.unit
class TestDispersion:
    """Test the dispersion relation omega(k) = sqrt(k^2 + m_f^2)"""

    @pytest.mark.parametrize(("k", "m_f", "expected"), [(0.0, 1.0, 1.0), (3.0, 4.0, 5.0), (1.0, 1.0, np.sqrt(2.0))])
    def test_known_values(self, k, m_f, expected):
        """Test closed-form values"""
        assert omega_eval(k, m_f) == pytest.approx(expected, rel=1e-12)

    def test_bounded_below_by_field_mass(self, model_cfg):
        """Test omega >= m_f on the grid with equality at k=0"""
        omega = model_cfg.omega
        assert np.all(omega >= 1.0)
        assert omega[model_cfg.kgrid.size // 2] == 1.0

    @pytest.mark.parametrize("m_f", [0.0, -1.0])
    def test_non_positive_mass_rejected(self, m_f):
        """Test that a non-positive field mass is a configuration error"""
        with pytest.raises(ConfigurationError):
            omega_eval(1.0, m_f)


@pytest.mark.unit
class TestKGrid:
    """Test k-grid invariants"""

    def test_symmetric_grid(self):
        grid = KGrid.symmetric(2.0, 9)
        assert grid.weight == pytest.approx(0.5)
        np.testing.assert_allclose(grid.points, -grid.points[::-1])

    def test_asymmetric_points_rejected(self):
        with pytest.raises(ConfigurationError):
            KGrid(points=np.array([0.0, 0.5, 1.0]), weight=0.5)

    def test_central_restriction_parity(self):
        grid = KGrid.symmetric(4.0, 17)
        assert grid.restrict_central(3).points.tolist() == [-0.5, 0.0, 0.5]
        with pytest.raises(ConfigurationError):
            grid.restrict_central(4)


@pytest.mark.unit
class TestXSigmaNorm:
    """Test the weighted X^sigma norm"""

    def test_zero_state(self, model_cfg):
        assert xsigma_norm(ClassicalState.zeros(1, model_cfg.kgrid.size), 0.5, model_cfg) == 0.0

    def test_single_mode_indicator(self, model_cfg):
        """Test that one unit mode contributes sqrt(dk) omega^sigma"""
        i = 3
        alpha = np.zeros(model_cfg.kgrid.size, dtype=complex)
        alpha[i] = 1.0
        u = ClassicalState(np.zeros(1), np.zeros(1), alpha)
        expected = np.sqrt(model_cfg.kgrid.weight) * model_cfg.omega[i] ** 0.5
        assert xsigma_norm(u, 0.5, model_cfg) == pytest.approx(expected, rel=1e-12)

    def test_matches_direct_summation(self, model_cfg, rng):
        u = random_state(rng, model_cfg)
        total = sum(float(x) ** 2 for x in u.p) + sum(float(x) ** 2 for x in u.q)
        for w, a in zip(model_cfg.omega, u.alpha, strict=True):
            total += model_cfg.kgrid.weight * float(w) ** 1.0 * abs(complex(a)) ** 2
        assert xsigma_norm(u, 0.5, model_cfg) == pytest.approx(np.sqrt(total), rel=1e-12)

    def test_norm_axioms(self, model_cfg, rng):
        """Test triangle inequality and absolute homogeneity"""
        for _ in range(50):
            u, v = random_state(rng, model_cfg), random_state(rng, model_cfg)
            assert xsigma_norm(u + v, 0.5, model_cfg) <= xsigma_norm(u, 0.5, model_cfg) + xsigma_norm(v, 0.5, model_cfg) + 1e-12
            assert xsigma_norm(-2.5 * u, 0.5, model_cfg) == pytest.approx(2.5 * xsigma_norm(u, 0.5, model_cfg), rel=1e-12)

    def test_grid_mismatch(self, model_cfg):
        u = ClassicalState(np.zeros(1), np.zeros(1), np.zeros(model_cfg.kgrid.size + 2))
        with pytest.raises(ShapeError):
            xsigma_norm(u, 0.5, model_cfg)


@pytest.mark.unit
class TestInteraction:
    """Test the interaction functional I_j and its gradient"""

    def test_vanishes_without_field(self, model_cfg):
        alpha = np.zeros(model_cfg.kgrid.size, dtype=complex)
        assert interaction_I(np.array([0.3]), alpha, 0, model_cfg) == 0.0
        assert grad_I(np.array([0.3]), alpha, 0, model_cfg) == 0.0

    def test_vanishes_without_form_factor(self, decoupled_cfg, rng):
        u = random_state(rng, decoupled_cfg)
        assert interaction_I(u.q, u.alpha, 0, decoupled_cfg) == 0.0

    def test_refined_grid_oracle(self):
        """Test against the same smooth integrand on a 16x finer grid"""
        coarse = build_model(k_points=33)
        fine = build_model(k_points=16 * 32 + 1)
        q = np.array([0.3])
        value = interaction_I(q, np.exp(-coarse.kgrid.points**2).astype(complex), 0, coarse)
        reference = interaction_I(q, np.exp(-fine.kgrid.points**2).astype(complex), 0, fine)
        assert value == pytest.approx(reference, rel=1e-6)

    def test_gradient_matches_finite_difference(self, model_cfg, rng):
        h = 1e-5
        for _ in range(10):
            u = random_state(rng, model_cfg)
            fd = (interaction_I(u.q + h, u.alpha, 0, model_cfg) - interaction_I(u.q - h, u.alpha, 0, model_cfg)) / (2 * h)
            assert grad_I(u.q, u.alpha, 0, model_cfg) == pytest.approx(fd, rel=1e-6, abs=1e-7)

    @pytest.mark.property
    def test_gradient_bounds_on_random_samples(self, model_cfg, rng):
        """Test the gradient bound and its Lipschitz companion on 1000 samples"""
        for _ in range(1000):
            u, w = random_state(rng, model_cfg), random_state(rng, model_cfg)
            assert abs(grad_I(u.q, u.alpha, 0, model_cfg)) <= gradient_bound(u.alpha, model_cfg) * (1 + 1e-12)
            gap = abs(grad_I(u.q, u.alpha, 0, model_cfg) - grad_I(w.q, w.alpha, 0, model_cfg))
            assert gap <= gradient_lipschitz_bound(u.q, u.alpha, w.q, w.alpha, 0, model_cfg) * (1 + 1e-12)

    def test_particle_index_checked(self, model_cfg):
        with pytest.raises(ConfigurationError):
            interaction_I(np.zeros(1), np.zeros(model_cfg.kgrid.size), 1, model_cfg)


@pytest.mark.unit
class TestHamiltonian:
    """Test the classical Hamiltonian"""

    def test_nonrelativistic_kinetic_energy(self):
        cfg = build_model(amplitude=0.0, relativistic=False, potential="zero")
        u = ClassicalState(np.array([2.0]), np.zeros(1), np.zeros(cfg.kgrid.size))
        assert hamiltonian_classical(u, cfg) == pytest.approx(2.0)

    def test_semirelativistic_rest_mass(self):
        cfg = build_model(amplitude=0.0, masses=(3.0,), potential="zero")
        u = ClassicalState(np.zeros(1), np.zeros(1), np.zeros(cfg.kgrid.size))
        assert hamiltonian_classical(u, cfg) == pytest.approx(3.0)

    def test_potential_gradient_matches_finite_difference(self, model_cfg):
        pot = model_cfg.potential
        h = 1e-4
        for q in (-1.3, 0.2, 0.8):
            fd = (pot.value(np.array([q + h])) - pot.value(np.array([q - h]))) / (2 * h)
            assert pot.gradient(np.array([q]))[0] == pytest.approx(fd, abs=1e-7)


@pytest.mark.unit
class TestRealPart:
    def test_small_residue_discarded(self):
        assert real_part(1.0 + 1e-15j) == 1.0

    def test_large_residue_raises(self):
        with pytest.raises(NumericalConsistencyError):
            real_part(1.0 + 1e-6j)


@pytest.mark.unit
class TestAssumptions:
    """Test the assumption report"""

    def test_smooth_presets_pass(self, model_cfg):
        report = check_assumptions(model_cfg)
        assert report.passed
        assert not report.flags
        assert all(np.isfinite(c.value) for c in report.checks)

    def test_growing_form_factor_flagged(self):
        """Test that a form factor growing like omega^2 depends on the grid extent"""
        kgrid = KGrid.symmetric(4.0, 17)
        disp = Dispersion(1.0)
        cfg = ModelConfig(
            masses=(1.0,),
            relativistic=True,
            dispersion=disp,
            form_factor=make_form_factor("custom", kgrid, disp, amplitude=1.0, power=2.0),
            potential=zero_potential(1),
            kgrid=kgrid,
        )
        report = check_assumptions(cfg)
        assert any(f.startswith("grid-truncation-dependent") for f in report.flags)
        assert np.isfinite(report.value("omega^(1/2) chi"))

    def test_unbounded_potential_fails(self, model_cfg):
        cfg = ModelConfig(
            masses=(1.0,),
            relativistic=True,
            dispersion=model_cfg.dispersion,
            form_factor=model_cfg.form_factor,
            potential=harmonic_potential(1.0, 1),
            kgrid=model_cfg.kgrid,
        )
        report = check_assumptions(cfg)
        assert not report.passed
        assert not next(c for c in report.checks if c.name == "sup V").passed
