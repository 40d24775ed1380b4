import math

import numpy as np
import pytest

from app.core.exceptions import ConfigurationError, GuardViolationError, ShapeError, TruncationOverflowError
from app.services.fock_space import (
    FockBasis,
    FockVector,
    annihilate,
    annihilation_matrix,
    coherent_field,
    coherent_field_via_weyl,
    create,
    creation_matrix,
    dGamma,
    dgamma_diagonal,
    mode_ladder,
    number_diagonal,
    random_safe_vector,
    weyl_field,
)

DK = 0.25
HBAR = 0.2


def _mode(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def _l2(f):
    return math.sqrt(DK * float(np.sum(np.abs(f) ** 2)))


@pytest.mark.unit
class TestFockBasis:
    """Test the occupation-number basis"""

    @pytest.mark.parametrize(("modes", "n_max"), [(1, 0), (1, 5), (3, 4), (4, 3)])
    def test_dimension(self, modes, n_max):
        assert FockBasis(modes, n_max).dimension == math.comb(modes + n_max, n_max)

    def test_vacuum_first(self, fbasis):
        assert fbasis.vacuum_index() == 0
        assert fbasis.total[0] == 0

    def test_shells_ordered(self, fbasis):
        assert np.all(np.diff(fbasis.total) >= 0)

    def test_safe_sector_and_top_shell_partition(self, fbasis):
        assert np.array_equal(fbasis.safe_sector(), ~fbasis.top_shell())

    @pytest.mark.parametrize(("modes", "n_max"), [(0, 4), (2, -1)])
    def test_invalid_basis(self, modes, n_max):
        with pytest.raises(ConfigurationError):
            FockBasis(modes, n_max)


@pytest.mark.unit
class TestFockVector:
    def test_shape_checked(self, fbasis):
        with pytest.raises(ShapeError):
            FockVector(fbasis, np.zeros(fbasis.dimension + 1), HBAR)

    @pytest.mark.parametrize("hbar", [0.0, -0.1, 1.5])
    def test_hbar_range(self, fbasis, hbar):
        with pytest.raises(ConfigurationError):
            FockVector.vacuum(fbasis, hbar)

    def test_random_safe_vector(self, fbasis, rng):
        psi = random_safe_vector(fbasis, HBAR, rng)
        assert psi.norm() == pytest.approx(1.0)
        assert np.all(psi.coefficients[fbasis.top_shell()] == 0)


@pytest.mark.unit
class TestLadderOperators:
    """Test smeared creation and annihilation operators"""

    def test_vacuum_is_annihilated(self, fbasis, rng):
        out = annihilate(_mode(rng, 3), FockVector.vacuum(fbasis, HBAR), DK)
        assert out.norm() == 0.0

    def test_creation_is_adjoint(self, fbasis, rng):
        f = _mode(rng, 3)
        a = annihilation_matrix(f, fbasis, HBAR, DK).toarray()
        ad = creation_matrix(f, fbasis, HBAR, DK).toarray()
        np.testing.assert_allclose(ad, a.conj().T, atol=0)

    def test_single_quantum(self, fbasis):
        """Test a*(e_i) on the vacuum against sqrt(hbar dk)"""
        f = np.array([0.0, 1.0, 0.0], dtype=complex)
        psi = create(f, FockVector.vacuum(fbasis, HBAR), DK)
        expected = np.zeros(fbasis.dimension, dtype=complex)
        expected[fbasis.index((0, 1, 0))] = math.sqrt(HBAR * DK)
        np.testing.assert_allclose(psi.coefficients, expected, atol=1e-15)

    def test_canonical_commutator(self, fbasis, rng):
        """Test [a(f), a*(g)] = hbar <f, g> on the safe sector"""
        for _ in range(20):
            f, g = _mode(rng, 3), _mode(rng, 3)
            a = annihilation_matrix(f, fbasis, HBAR, DK)
            ad = creation_matrix(g, fbasis, HBAR, DK)
            psi = random_safe_vector(fbasis, HBAR, rng).coefficients
            lhs = a @ (ad @ psi) - ad @ (a @ psi)
            bracket = HBAR * DK * np.vdot(f, g)
            np.testing.assert_allclose(lhs, bracket * psi, atol=1e-12)

    def test_mode_commutator(self, fbasis, rng):
        ladder = mode_ladder(fbasis, HBAR)
        psi = random_safe_vector(fbasis, HBAR, rng).coefficients
        for i, a in enumerate(ladder):
            for j, b in enumerate(ladder):
                lhs = a @ (b.conj().T @ psi) - b.conj().T @ (a @ psi)
                np.testing.assert_allclose(lhs, (HBAR if i == j else 0.0) * psi, atol=1e-12)

    @pytest.mark.property
    def test_number_operator_bounds(self, fbasis, rng):
        """Test |a(f) psi| <= |f| |N^(1/2) psi| and |a*(f) psi| <= |f| |(N + hbar)^(1/2) psi|"""
        n_diag = number_diagonal(fbasis, HBAR)
        for _ in range(200):
            f = _mode(rng, 3)
            psi = random_safe_vector(fbasis, HBAR, rng)
            root_n = np.linalg.norm(np.sqrt(n_diag) * psi.coefficients)
            root_n1 = np.linalg.norm(np.sqrt(n_diag + HBAR) * psi.coefficients)
            assert annihilate(f, psi, DK).norm() <= _l2(f) * root_n * (1 + 1e-12)
            assert create(f, psi, DK).norm() <= _l2(f) * root_n1 * (1 + 1e-12)

    def test_creation_from_top_shell_raises(self, fbasis):
        coeffs = np.zeros(fbasis.dimension, dtype=complex)
        coeffs[fbasis.index((4, 0, 0))] = 1.0
        with pytest.raises(TruncationOverflowError) as exc:
            create(np.array([1.0, 0.0, 0.0]), FockVector(fbasis, coeffs, HBAR), DK)
        assert exc.value.leakage > 0

    def test_mode_function_shape(self, fbasis):
        with pytest.raises(ShapeError):
            annihilation_matrix(np.ones(4), fbasis, HBAR, DK)


@pytest.mark.unit
class TestSecondQuantization:
    def test_number_diagonal(self, fbasis):
        np.testing.assert_allclose(number_diagonal(fbasis, HBAR), HBAR * fbasis.total)

    def test_dgamma_of_omega(self, fbasis):
        omega = np.sqrt(np.array([-0.25, 0.0, 0.25]) ** 2 + 1.0)
        diag = dgamma_diagonal(omega, fbasis, HBAR)
        assert diag[fbasis.index((1, 0, 2))] == pytest.approx(HBAR * (omega[0] + 2 * omega[2]))

    def test_dgamma_applies_diagonal(self, fbasis, rng):
        psi = random_safe_vector(fbasis, HBAR, rng)
        out = dGamma(np.ones(3), psi)
        np.testing.assert_allclose(out.coefficients, HBAR * fbasis.total * psi.coefficients)

    def test_weights_shape(self, fbasis):
        with pytest.raises(ShapeError):
            dgamma_diagonal(np.ones(2), fbasis, HBAR)


@pytest.mark.unit
class TestCoherentField:
    """Test coherent vectors and the field Weyl operator"""

    @pytest.fixture
    def alpha0(self):
        k = np.array([-0.25, 0.0, 0.25])
        return 0.05 * np.exp(-0.5 * k**2).astype(complex)

    def test_mean_field(self, fbasis, alpha0):
        psi = coherent_field(alpha0, HBAR, fbasis, DK)
        for i, a in enumerate(mode_ladder(fbasis, HBAR)):
            mean = np.vdot(psi.coefficients, a @ psi.coefficients)
            assert mean == pytest.approx(math.sqrt(DK) * alpha0[i], abs=1e-10)

    def test_mean_number(self, fbasis, alpha0):
        psi = coherent_field(alpha0, HBAR, fbasis, DK)
        number = float(np.vdot(psi.coefficients, number_diagonal(fbasis, HBAR) * psi.coefficients).real)
        assert number == pytest.approx(DK * float(np.sum(np.abs(alpha0) ** 2)), rel=1e-9)
        assert psi.leakage < 1e-9

    def test_matches_displaced_vacuum(self, fbasis, alpha0):
        direct = coherent_field(alpha0, HBAR, fbasis, DK)
        displaced = coherent_field_via_weyl(alpha0, HBAR, fbasis, DK)
        np.testing.assert_allclose(displaced.coefficients, direct.coefficients, atol=1e-5)

    def test_weyl_is_unitary(self, fbasis, rng):
        w = weyl_field(0.3 * _mode(rng, 3), HBAR, fbasis, DK, leakage_threshold=1.0)
        np.testing.assert_allclose(w @ w.conj().T, np.eye(fbasis.dimension), atol=1e-12)

    def test_weyl_of_zero_is_identity(self, fbasis):
        np.testing.assert_array_equal(weyl_field(np.zeros(3), HBAR, fbasis, DK), np.eye(fbasis.dimension))

    def test_large_displacement_raises(self, fbasis):
        with pytest.raises(TruncationOverflowError):
            weyl_field(np.full(3, 20.0, dtype=complex), HBAR, fbasis, DK)

    def test_mean_number_guard(self, fbasis):
        """Test the N_max/4 guard on |alpha0|^2/hbar"""
        with pytest.raises(GuardViolationError) as exc:
            coherent_field(np.full(3, 2.0, dtype=complex), HBAR, fbasis, DK)
        assert "increase n_max" in exc.value.detail
