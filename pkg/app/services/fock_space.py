"""
Truncated bosonic Fock space over the retained field modes.

Occupation vectors (m_1..m_M) with Σ m_i ≤ N_max index the basis. Ladder
operators carry the ħ scaling, â_i|m⟩ = √(ħ m_i)|m − e_i⟩, and smeared
operators use orthonormal discrete modes:

    â_ħ(f) = Σ_i √Δk conj(f(k_i)) â_i,      [â_ħ(f), â*_ħ(g)] = ħ⟨f, g⟩.

Creation past N_max is dropped; the dropped squared norm is reported as
leakage.
"""

import itertools
import logging
import math
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import NDArray

from app.core.exceptions import ConfigurationError, GuardViolationError, ShapeError, TruncationOverflowError

logger = logging.getLogger(__name__)

DEFAULT_LEAKAGE_THRESHOLD = 1e-6

ModeFunction = NDArray[np.complex128]


def _enumerate_shells(n_modes: int, n_max: int) -> list[tuple[int, ...]]:
    states = [s for s in itertools.product(range(n_max + 1), repeat=n_modes) if sum(s) <= n_max]
    states.sort(key=lambda s: (sum(s), tuple(-x for x in s)))
    return states


class FockBasis:
    """Occupation-number basis with total occupation capped at `n_max`.

    Immutable after construction; the sparse lowering matrices are built once
    and shared by every evaluation.
    """

    def __init__(self, n_modes: int, n_max: int):
        if n_modes < 1:
            raise ConfigurationError(f"need at least one field mode, got {n_modes}")
        if n_max < 0:
            raise ConfigurationError(f"n_max must be non-negative, got {n_max}")
        self.n_modes = n_modes
        self.n_max = n_max
        self.states = np.array(_enumerate_shells(n_modes, n_max), dtype=int).reshape(-1, n_modes)
        self.state_to_index = {tuple(int(x) for x in s): i for i, s in enumerate(self.states)}
        self.total = self.states.sum(axis=1)
        self._lock = threading.Lock()
        assert self.dimension == math.comb(n_modes + n_max, n_max), "Basis enumeration failed"

    def __repr__(self) -> str:
        return f"FockBasis(n_modes={self.n_modes}, n_max={self.n_max}, dimension={self.dimension})"

    @property
    def dimension(self) -> int:
        return int(self.states.shape[0])

    def index(self, occupation: tuple[int, ...]) -> int:
        return self.state_to_index[tuple(occupation)]

    def vacuum_index(self) -> int:
        return self.index((0,) * self.n_modes)

    def safe_sector(self) -> NDArray[np.bool_]:
        """Basis states on which one creation cannot leave the truncated space."""
        return self.total <= self.n_max - 1

    def top_shell(self) -> NDArray[np.bool_]:
        return self.total == self.n_max

    @cached_property
    def lowering(self) -> list[sp.csr_matrix]:
        """Unscaled lowering matrices L_i with L_i|m⟩ = √m_i |m − e_i⟩."""
        with self._lock:
            mats = []
            for i in range(self.n_modes):
                rows, cols, vals = [], [], []
                for col, state in enumerate(self.states):
                    m = int(state[i])
                    if m == 0:
                        continue
                    lowered = list(state)
                    lowered[i] -= 1
                    rows.append(self.index(tuple(lowered)))
                    cols.append(col)
                    vals.append(math.sqrt(m))
                mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(self.dimension, self.dimension)))
            return mats

    @cached_property
    def overflow(self) -> list[sp.csr_matrix]:
        """Raising from the top shell into the first excluded shell, per mode."""
        with self._lock:
            shell = [s for s in itertools.product(range(self.n_max + 2), repeat=self.n_modes) if sum(s) == self.n_max + 1]
            shell_index = {s: i for i, s in enumerate(shell)}
            mats = []
            top = np.flatnonzero(self.top_shell())
            for i in range(self.n_modes):
                rows, cols, vals = [], [], []
                for col in top:
                    raised = [int(x) for x in self.states[col]]
                    raised[i] += 1
                    rows.append(shell_index[tuple(raised)])
                    cols.append(col)
                    vals.append(math.sqrt(raised[i]))
                mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(shell), self.dimension)))
            return mats


@dataclass(eq=False)
class FockVector:
    basis: FockBasis
    coefficients: NDArray[np.complex128]
    hbar: float
    leakage: float = 0.0

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.basis.dimension,):
            raise ShapeError(
                f"Fock vector has shape {self.coefficients.shape}, basis has {self.basis.dimension}")
        if not 0 < self.hbar <= 1:
            raise ConfigurationError(f"hbar must lie in (0, 1], got {self.hbar}")

    @classmethod
    def vacuum(cls, basis: FockBasis, hbar: float) -> "FockVector":
        coeffs = np.zeros(basis.dimension, dtype=complex)
        coeffs[basis.vacuum_index()] = 1.0
        return cls(basis, coeffs, hbar)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def inner(self, other: "FockVector") -> complex:
        return complex(np.vdot(self.coefficients, other.coefficients))


# ----------------------------------------------------------------------------
# operator assembly
# ----------------------------------------------------------------------------

def _check_mode_function(f: ModeFunction, basis: FockBasis) -> NDArray[np.complex128]:
    arr = np.asarray(f, dtype=complex)
    if arr.shape != (basis.n_modes,):
        raise ShapeError(f"mode function has shape {arr.shape}, basis has {basis.n_modes} modes")
    return arr


def annihilation_matrix(f: ModeFunction, basis: FockBasis, hbar: float, dk: float) -> sp.csr_matrix:
    """Sparse â_ħ(f) on the truncated basis."""
    coeffs = np.sqrt(dk * hbar) * np.conj(_check_mode_function(f, basis))
    out = sp.csr_matrix((basis.dimension, basis.dimension), dtype=complex)
    for c, low in zip(coeffs, basis.lowering, strict=True):
        if c != 0:
            out = out + c * low
    return out.tocsr()


def creation_matrix(f: ModeFunction, basis: FockBasis, hbar: float, dk: float) -> sp.csr_matrix:
    """Truncated â*_ħ(f): the adjoint of `annihilation_matrix`."""
    return annihilation_matrix(f, basis, hbar, dk).conj().T.tocsr()


def mode_ladder(basis: FockBasis, hbar: float) -> list[sp.csr_matrix]:
    """â_i = √ħ L_i per mode; ⟨â_i⟩ is the orthonormal-mode amplitude √Δk α(k_i)."""
    return [np.sqrt(hbar) * low for low in basis.lowering]


def dgamma_diagonal(weights: NDArray[np.float64], basis: FockBasis, hbar: float) -> NDArray[np.float64]:
    """Diagonal of dΓ(weights): ħ Σ_i m_i weight_i per basis state."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (basis.n_modes,):
        raise ShapeError(f"weights have shape {w.shape}, basis has {basis.n_modes} modes")
    return hbar * (basis.states @ w)


def number_diagonal(basis: FockBasis, hbar: float) -> NDArray[np.float64]:
    return dgamma_diagonal(np.ones(basis.n_modes), basis, hbar)


# ----------------------------------------------------------------------------
# vector operations
# ----------------------------------------------------------------------------

def annihilate(f: ModeFunction, psi: FockVector, dk: float) -> FockVector:
    a = annihilation_matrix(f, psi.basis, psi.hbar, dk)
    return FockVector(psi.basis, a @ psi.coefficients, psi.hbar, psi.leakage)


def create(
    f: ModeFunction,
    psi: FockVector,
    dk: float,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> FockVector:
    basis = psi.basis
    fvals = _check_mode_function(f, basis)
    result = creation_matrix(fvals, basis, psi.hbar, dk) @ psi.coefficients

    coeffs = np.sqrt(dk * psi.hbar) * fvals
    spilled = sum(c * (ov @ psi.coefficients) for c, ov in zip(coeffs, basis.overflow, strict=True))
    leaked = float(np.sum(np.abs(spilled) ** 2))
    scale = max(psi.norm() ** 2, 1e-300)
    if leaked / scale > leakage_threshold:
        logger.error(f"Creation left the truncated space: leakage {leaked / scale:.3e}")
        raise TruncationOverflowError(
            f"creation beyond N_max={basis.n_max}; increase n_max", leakage=leaked / scale)
    return FockVector(basis, result, psi.hbar, psi.leakage + leaked)


def dGamma(weights: NDArray[np.float64], psi: FockVector) -> FockVector:
    diag = dgamma_diagonal(weights, psi.basis, psi.hbar)
    return FockVector(psi.basis, diag * psi.coefficients, psi.hbar, psi.leakage)


# ----------------------------------------------------------------------------
# Weyl operator and coherent vectors
# ----------------------------------------------------------------------------

def field_quadrature(alpha: ModeFunction, basis: FockBasis, hbar: float, dk: float) -> NDArray[np.complex128]:
    """Dense (â_ħ(α) + â*_ħ(α)) / √2."""
    a = annihilation_matrix(alpha, basis, hbar, dk)
    return ((a + a.conj().T) / np.sqrt(2.0)).toarray()


def weyl_field(
    alpha: ModeFunction,
    hbar: float,
    basis: FockBasis,
    dk: float,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> NDArray[np.complex128]:
    """W₂(α) = exp(i(â_ħ(α) + â*_ħ(α))/√2) on the truncated basis.

    Exponentiated through the Hermitian eigendecomposition of the quadrature.
    The weight W₂(α)Ω places on the top shell measures truncation.
    """
    if not 0 < hbar <= 1:
        raise ConfigurationError(f"hbar must lie in (0, 1], got {hbar}")
    alpha = _check_mode_function(alpha, basis)
    if not np.any(alpha):
        return np.eye(basis.dimension, dtype=complex)
    evals, evecs = scipy.linalg.eigh(field_quadrature(alpha, basis, hbar, dk))
    weyl = (evecs * np.exp(1j * evals)) @ evecs.conj().T

    displaced_vacuum = weyl[:, basis.vacuum_index()]
    top = float(np.sum(np.abs(displaced_vacuum[basis.top_shell()]) ** 2))
    if basis.n_max > 0 and top > leakage_threshold:
        raise TruncationOverflowError(
            f"Weyl displacement reaches the N_max={basis.n_max} shell; increase n_max or reduce the test point",
            leakage=top)
    return weyl


def coherent_field(
    alpha0: ModeFunction,
    hbar: float,
    basis: FockBasis,
    dk: float,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> FockVector:
    """Normalized truncated coherent vector with ⟨â_ħ(f)⟩ = ⟨f, α₀⟩.

    Built as a product of truncated Poisson amplitudes; the discarded weight is
    recorded as leakage.
    """
    alpha0 = _check_mode_function(alpha0, basis)
    if not 0 < hbar <= 1:
        raise ConfigurationError(f"hbar must lie in (0, 1], got {hbar}")
    beta = np.sqrt(dk / hbar) * alpha0
    mean_number = float(np.sum(np.abs(beta) ** 2))
    if mean_number > basis.n_max / 4.0:
        raise GuardViolationError(
            f"coherent field needs ‖α₀‖²/ħ = {mean_number:.3g} > N_max/4 = {basis.n_max / 4:.3g}",
            hint="increase n_max or hbar, or reduce the field amplitude",
        )

    log_fact = np.array([math.lgamma(m + 1) for m in range(basis.n_max + 1)])
    coeffs = np.ones(basis.dimension, dtype=complex)
    for i in range(basis.n_modes):
        m = basis.states[:, i]
        coeffs *= beta[i] ** m * np.exp(-0.5 * log_fact[m])
    coeffs *= np.exp(-0.5 * mean_number)

    retained = float(np.sum(np.abs(coeffs) ** 2))
    leakage = max(0.0, 1.0 - retained)
    if leakage > leakage_threshold:
        raise TruncationOverflowError(
            f"coherent field loses weight beyond N_max={basis.n_max}; increase n_max", leakage=leakage)
    return FockVector(basis, coeffs / np.sqrt(retained), hbar, leakage)


def coherent_field_via_weyl(
    alpha0: ModeFunction,
    hbar: float,
    basis: FockBasis,
    dk: float,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> FockVector:
    """W₂(√2 α₀/(iħ)) Ω, the displaced vacuum used to cross-check `coherent_field`."""
    weyl = weyl_field(np.sqrt(2.0) * np.asarray(alpha0) / (1j * hbar), hbar, basis, dk, leakage_threshold)
    return FockVector(basis, weyl[:, basis.vacuum_index()].copy(), hbar)


def expectation_annihilation(f: ModeFunction, psi: FockVector, dk: float) -> complex:
    return psi.inner(annihilate(f, psi, dk)) / max(psi.norm() ** 2, 1e-300)


def random_safe_vector(basis: FockBasis, hbar: float, rng: np.random.Generator) -> FockVector:
    """Haar-random unit vector supported on the safe sector."""
    coeffs = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    coeffs[~basis.safe_sector()] = 0.0
    return FockVector(basis, coeffs / np.linalg.norm(coeffs), hbar)
