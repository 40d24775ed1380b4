import numpy as np
import pytest
from conftest import random_state

from app.core.exceptions import ConfigurationError
from app.models import TestPoint
from app.services.correspondence import (
    b_symbol,
    b_symbol_via_vector_field,
    build_test_panel,
    characteristic_classical,
    characteristic_oracle,
    characteristic_residual,
    hbar_sweep,
    is_monotone,
    pushforward_check,
    q_phase,
    sample_cloud,
)


def _random_point(rng, cfg, scale=0.1):
    u = random_state(rng, cfg, scale)
    return TestPoint(u.p, u.q, u.alpha, "random")


@pytest.mark.unit
class TestPhaseFunctions:
    """Test the classical characteristic function and its phase"""

    def test_unit_modulus(self, model_cfg, rng):
        for _ in range(20):
            xi, u = _random_point(rng, model_cfg), random_state(rng, model_cfg)
            assert abs(characteristic_classical(xi, u, model_cfg.kgrid)) == pytest.approx(1.0)

    def test_q_phase_is_imaginary(self, model_cfg, rng):
        xi, u = _random_point(rng, model_cfg), random_state(rng, model_cfg)
        assert q_phase(xi, u, model_cfg.kgrid).real == 0.0

    def test_oracle_tends_to_classical(self, quantum_cfg, u0_quantum):
        """Test that the coherent-state characteristic function approaches the classical one as hbar -> 0"""
        kgrid = quantum_cfg.kgrid
        for xi in build_test_panel(1, 3, seed=0):
            gaps = [
                abs(characteristic_oracle(u0_quantum, xi, h, kgrid) - characteristic_classical(xi, u0_quantum, kgrid))
                for h in (0.4, 0.2, 0.1, 0.05)
            ]
            assert all(b <= a for a, b in zip(gaps, gaps[1:], strict=False))
            assert gaps[-1] < 0.1

    @pytest.mark.property
    def test_b_symbol_matches_vector_field(self, model_cfg, rng):
        """Test b(s, xi, u) = -2pi Re<v(s, u), dual(xi)> on random samples"""
        for _ in range(100):
            xi, u = _random_point(rng, model_cfg, 1.0), random_state(rng, model_cfg)
            s = float(rng.uniform(0.0, 5.0))
            direct = b_symbol(s, xi, u, model_cfg)
            assert direct == pytest.approx(b_symbol_via_vector_field(s, xi, u, model_cfg), rel=1e-9, abs=1e-9)


@pytest.mark.unit
class TestTestPanel:
    def test_layout(self):
        panel = build_test_panel(1, 3, seed=7)
        assert len(panel) == 16
        assert panel[0].label == "q-direction"
        assert [p.label for p in panel[8:]] == [f"random-{i}" for i in range(8)]

    def test_seeded(self):
        a, b = build_test_panel(2, 3, seed=7), build_test_panel(2, 3, seed=7)
        for x, y in zip(a, b, strict=True):
            np.testing.assert_array_equal(x.alpha0, y.alpha0)
            np.testing.assert_array_equal(x.q0, y.q0)

    def test_sample_cloud(self, u0_quantum, rng):
        cloud = sample_cloud(u0_quantum, 5, rng)
        assert len(cloud) == 5
        assert all(u.alpha.shape == u0_quantum.alpha.shape for u in cloud)
        with pytest.raises(ConfigurationError):
            sample_cloud(u0_quantum, 0, rng)

    @pytest.mark.parametrize(
        ("values", "expected"),
        [([0.3, 0.2, 0.1], True), ([0.3, 0.32, 0.1], True), ([0.1, 0.3], False), ([0.0, 1e-10], True)],
    )
    def test_is_monotone(self, values, expected):
        assert is_monotone(values) is expected


@pytest.mark.integration
class TestCharacteristicResidual:
    """Test the residual of the characteristic equation"""

    def test_dirac_residual_second_order(self, quantum_cfg, u0_quantum):
        xi = build_test_panel(1, 3, seed=0)[6]
        residuals = [
            characteristic_residual([u0_quantum], xi, 0.0, 1.0, dt, quantum_cfg)["residual"]
            for dt in (0.1, 0.05, 0.025)
        ]
        orders = np.log2(np.array(residuals[:-1]) / np.array(residuals[1:]))
        assert np.all(orders > 1.5)

    def test_cloud_residual_reports_standard_error(self, quantum_cfg, u0_quantum, rng):
        cloud = sample_cloud(u0_quantum, 8, rng)
        record = characteristic_residual(cloud, build_test_panel(1, 3, seed=0)[0], 0.0, 0.2, 0.05, quantum_cfg,
                                         max_workers=2, label="cloud")
        assert record["samples"] == 8
        assert record["standard_error"] > 0
        assert record["residual"] < 1e-3
        assert record["label"] == "cloud"

    def test_window_starting_later(self, quantum_cfg, u0_quantum):
        xi = build_test_panel(1, 3, seed=0)[3]
        record = characteristic_residual([u0_quantum], xi, 0.2, 0.4, 0.05, quantum_cfg)
        assert record["residual"] < 1e-4

    def test_empty_window(self, quantum_cfg, u0_quantum):
        xi = build_test_panel(1, 3, seed=0)[0]
        assert characteristic_residual([u0_quantum], xi, 0.3, 0.3, 0.1, quantum_cfg)["residual"] == 0.0

    def test_step_must_divide_window(self, quantum_cfg, u0_quantum):
        xi = build_test_panel(1, 3, seed=0)[0]
        with pytest.raises(ConfigurationError):
            characteristic_residual([u0_quantum], xi, 0.0, 0.2, 0.3, quantum_cfg)

    def test_no_samples(self, quantum_cfg):
        with pytest.raises(ConfigurationError):
            characteristic_residual([], build_test_panel(1, 3, seed=0)[0], 0.0, 0.2, 0.1, quantum_cfg)


@pytest.mark.integration
class TestPushForward:
    def test_orderings_agree(self, quantum_cfg, u0_quantum, rng):
        cloud = sample_cloud(u0_quantum, 6, rng)
        panel = build_test_panel(1, 3, seed=0)
        assert pushforward_check(cloud, 0.5, quantum_cfg, panel) <= 1e-12

    def test_wrong_flow_detected(self, quantum_cfg, u0_quantum, rng):
        """Test that composing with a different flow shows up as a gap"""
        cloud = sample_cloud(u0_quantum, 6, rng)
        panel = build_test_panel(1, 3, seed=0)
        gap = pushforward_check(cloud, 1.0, quantum_cfg, panel, composed_flow=lambda u: u.copy())
        assert gap > 1e-3


@pytest.mark.integration
class TestHbarSweep:
    """Test the coherent-state sweep against the classical flow"""

    @pytest.fixture(scope="class")
    def report(self, quantum_cfg, pgrid, fbasis, u0_quantum):
        return hbar_sweep(u0_quantum, [0.4, 0.2, 0.05], [0.0, 0.25], quantum_cfg, pgrid, fbasis,
                          classical_dt=1e-2, seed=0, config_hash="abc")

    def test_guard_failure_recorded(self, report):
        """Test that hbar=0.05 fails the width guard and the sweep continues"""
        assert report.hbar_values == [0.4, 0.2]
        assert list(report.failures) == ["0.05"]
        assert "grid cells" in report.failures["0.05"]

    def test_rows(self, report):
        assert len(report.rows) == 4
        assert {r.t for r in report.rows} == {0.0, 0.25}
        assert report.config_hash == "abc"
        assert report.convention

    def test_initial_means_match(self, report):
        for row in report.rows:
            if row.t == 0.0:
                assert row.q_error < 1e-9
                assert row.field_error < 1e-9
                assert row.leakage < 1e-6

    def test_initial_characteristic_error_decreases(self, report):
        assert report.monotone["characteristic_error@t=0"]
        initial = report.column("characteristic_error", 0.0)
        assert initial[1] < initial[0]

    def test_monotonicity_keys(self, report):
        assert set(report.monotone) == {f"{c}@t={t:g}" for t in (0.0, 0.25) for c in (
            "q_error", "p_error", "field_error", "interaction_field_error", "characteristic_error")}

    def test_increasing_hbar_rejected(self, quantum_cfg, pgrid, fbasis, u0_quantum):
        with pytest.raises(ConfigurationError):
            hbar_sweep(u0_quantum, [0.2, 0.4], [0.0], quantum_cfg, pgrid, fbasis)
