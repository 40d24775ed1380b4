# ruff: noqa: E402
"""Property-based tests for norms, flows and the Fock algebra."""

import math

import numpy as np
import pytest

hypothesis = pytest.importorskip("hypothesis")
from hypothesis import given, settings, strategies as st
from conftest import build_model

from app.models import ClassicalState, TestPoint
from app.services.classical_dynamics import free_flow
from app.services.correspondence import characteristic_classical, pairing
from app.services.fock_space import FockBasis, annihilation_matrix, creation_matrix, random_safe_vector
from app.services.model_core import hamiltonian_classical, xsigma_norm

pytestmark = pytest.mark.property

MODEL = build_model()
DECOUPLED = build_model(amplitude=0.0, potential="zero")
K = MODEL.kgrid.size

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)


def _vector(size: int) -> st.SearchStrategy:
    return st.lists(finite, min_size=size, max_size=size).map(np.array)


# Strategy generating classical states on the 17-point test grid
state_strategy = st.builds(
    lambda p, q, re, im: ClassicalState(p, q, re + 1j * im),
    _vector(1), _vector(1), _vector(K), _vector(K),
)
sigma_strategy = st.sampled_from([0.0, 0.5, 0.75, 1.0])
hbar_strategy = st.sampled_from([0.4, 0.2, 0.1, 0.05])


@settings(max_examples=50, deadline=None)
@given(state_strategy, state_strategy, sigma_strategy)
def test_norm_triangle_inequality(u, v, sigma):
    """The X^sigma norm is subadditive."""
    assert xsigma_norm(u + v, sigma, MODEL) <= xsigma_norm(u, sigma, MODEL) + xsigma_norm(v, sigma, MODEL) + 1e-9


@settings(max_examples=50, deadline=None)
@given(state_strategy, st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
def test_norm_homogeneity(u, c):
    assert xsigma_norm(c * u, 0.5, MODEL) == pytest.approx(abs(c) * xsigma_norm(u, 0.5, MODEL), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(state_strategy, st.floats(min_value=-20.0, max_value=20.0, allow_nan=False), sigma_strategy)
def test_free_flow_is_isometric(u, t, sigma):
    """Phi^f_t preserves every X^sigma norm and the decoupled energy."""
    moved = free_flow(t, u, MODEL)
    assert xsigma_norm(moved, sigma, MODEL) == pytest.approx(xsigma_norm(u, sigma, MODEL), rel=1e-12)
    assert hamiltonian_classical(moved, DECOUPLED) == pytest.approx(hamiltonian_classical(u, DECOUPLED), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(state_strategy, state_strategy, state_strategy)
def test_characteristic_function_is_multiplicative(a, u, v):
    """exp(2 pi i Re<xi, u + v>) factorizes because the pairing is real-linear."""
    xi = TestPoint(a.p, a.q, a.alpha, "drawn")
    assert pairing(xi, u + v, MODEL.kgrid) == pytest.approx(
        pairing(xi, u, MODEL.kgrid) + pairing(xi, v, MODEL.kgrid), rel=1e-9, abs=1e-6)
    product = characteristic_classical(xi, u, MODEL.kgrid) * characteristic_classical(xi, v, MODEL.kgrid)
    assert abs(product) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=0, max_value=5))
def test_fock_index_is_a_bijection(modes, n_max):
    basis = FockBasis(modes, n_max)
    assert basis.dimension == math.comb(modes + n_max, n_max)
    for i, occupation in enumerate(basis.states):
        assert basis.index(tuple(int(x) for x in occupation)) == i


@settings(max_examples=40, deadline=None)
@given(_vector(3), _vector(3), _vector(3), _vector(3), hbar_strategy, st.integers(min_value=0, max_value=2**32 - 1))
def test_canonical_commutator(f_re, f_im, g_re, g_im, hbar, seed):
    """[a(f), a*(g)] = hbar <f, g> on the sector one creation away from the cutoff."""
    basis = FockBasis(3, 4)
    dk = 0.25
    f, g = f_re + 1j * f_im, g_re + 1j * g_im
    a = annihilation_matrix(f, basis, hbar, dk)
    ad = creation_matrix(g, basis, hbar, dk)
    psi = random_safe_vector(basis, hbar, np.random.default_rng(seed)).coefficients
    lhs = a @ (ad @ psi) - ad @ (a @ psi)
    bracket = hbar * dk * np.vdot(f, g)
    np.testing.assert_allclose(lhs, bracket * psi, atol=1e-10 * max(1.0, abs(bracket)))
