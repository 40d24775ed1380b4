"""
Discretized Nelson Hamiltonian on (particle grid)^n ⊗ (truncated Fock space).

State vectors are stored as (P, D) coefficient matrices, P = N_x^n particle
grid points and D the Fock dimension, so the flattened vector uses the
Kronecker ordering particle ⊗ field:

    Ĥ = Σ_j f_j(p̂_j) + V(q̂) + dΓ(ω) + Σ_j [â_ħ(g_j(q̂)) + â*_ħ(g_j(q̂))],
    g_j(x)(k) = χ(k)/√ω(k) e^{-2πik·x_j}.

Kinetic terms are exact Fourier multipliers on the periodic grid.
"""

import logging
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.linalg import eigh_tridiagonal
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from app.core.exceptions import (
    AssemblyError,
    ConfigurationError,
    EvolutionError,
    GuardViolationError,
    KrylovConvergenceError,
    ShapeError,
)
from app.models import ClassicalState, ModelConfig, ObservableRecord, ParticleGrid, QuantumState, TestPoint
from app.services.fock_space import (
    DEFAULT_LEAKAGE_THRESHOLD,
    FockBasis,
    coherent_field,
    dgamma_diagonal,
    mode_ladder,
    random_safe_vector,
)
from app.services.model_core import chi_norm, real_part

logger = logging.getLogger(__name__)

DENSE_THRESHOLD = 4096
HERMITICITY_TOLERANCE = 1e-12
NORM_TOLERANCE = 1e-10
KRYLOV_TOLERANCE = 1e-10
KRYLOV_DT = 0.01
KRYLOV_SUBSPACE = 24

CHARACTERISTIC_CONVENTION = (
    "W1(-2pi p0 + i 2pi q0) (x) W2(sqrt(2) pi alpha0); coherent centre z = (q + i p)/hbar"
)


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------

def _particle_coordinates(pgrid: ParticleGrid, n: int) -> NDArray[np.float64]:
    """Grid coordinates of every product-grid point, shape (N_x^n, n)."""
    mesh = np.meshgrid(*([pgrid.x] * n), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, n)


def _fourier_matrix(symbol: NDArray[np.float64]) -> NDArray[np.complex128]:
    """Dense F† diag(symbol) F with F the unitary DFT in FFT mode order."""
    dft = scipy.linalg.dft(symbol.size, scale="sqrtn")
    return dft.conj().T @ (symbol[:, None] * dft)


def _embed_particle(op: NDArray[np.complex128], j: int, n: int, n_points: int) -> sp.csr_matrix:
    left = sp.identity(n_points**j, format="csr")
    right = sp.identity(n_points ** (n - j - 1), format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(op)), right, format="csr")


def _hermiticity_deficit(mat: sp.spmatrix) -> float:
    diff = (mat - mat.conj().T).tocoo()
    if diff.nnz == 0:
        return 0.0
    scale = max(1.0, float(abs(mat).max()))
    return float(np.max(np.abs(diff.data))) / scale


@dataclass(frozen=True, eq=False)
class HamiltonianAssembly:
    """Immutable Ĥ with its parts; the eigensystem is computed once on demand."""

    hbar: float
    cfg: ModelConfig
    pgrid: ParticleGrid
    fbasis: FockBasis
    kinetic: sp.csr_matrix
    potential: NDArray[np.float64]
    field_free: NDArray[np.float64]
    interaction: sp.csr_matrix
    total: sp.csr_matrix
    coordinates: NDArray[np.float64]
    dense_threshold: int = DENSE_THRESHOLD
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def n_particles(self) -> int:
        return self.cfg.n

    @property
    def particle_dimension(self) -> int:
        return self.pgrid.n_points**self.cfg.n

    @property
    def fock_dimension(self) -> int:
        return self.fbasis.dimension

    @property
    def dimension(self) -> int:
        return self.particle_dimension * self.fock_dimension

    @property
    def is_dense(self) -> bool:
        return self.dimension <= self.dense_threshold

    @property
    def free(self) -> sp.csr_matrix:
        """Ĥ₀ = Σ_j f_j(p̂_j) + dΓ(ω)."""
        return (self.kinetic + sp.diags(np.tile(self.field_free, self.particle_dimension))).tocsr()

    def eigensystem(self) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
        with self._lock:
            if "eigh" not in self._cache:
                logger.info(f"Diagonalizing Hamiltonian of dimension {self.dimension} (hbar={self.hbar:g})")
                self._cache["eigh"] = scipy.linalg.eigh(self.total.toarray())
            return self._cache["eigh"]

    def fock_weights(self, weights: NDArray[np.float64]) -> NDArray[np.float64]:
        """Diagonal of Id ⊗ dΓ(weights) on the full space."""
        return np.tile(dgamma_diagonal(weights, self.fbasis, self.hbar), self.particle_dimension)

    def position_diagonal(self, j: int) -> NDArray[np.float64]:
        """Diagonal of q̂_j on the full space."""
        return np.repeat(self.coordinates[:, j], self.fock_dimension)

    def check_state(self, psi: QuantumState) -> None:
        if psi.coefficients.shape != (self.particle_dimension, self.fock_dimension):
            raise ShapeError(
                f"state has shape {psi.coefficients.shape}, "
                f"assembly expects {(self.particle_dimension, self.fock_dimension)}")
        if abs(psi.hbar - self.hbar) > 1e-15:
            raise ConfigurationError(f"state prepared at hbar={psi.hbar}, operators at hbar={self.hbar}")


def _potential_diagonal(cfg: ModelConfig, coords: NDArray[np.float64]) -> NDArray[np.float64]:
    pot = cfg.potential
    if pot.pointwise is not None:
        return np.sum(np.asarray(pot.pointwise(coords), dtype=float), axis=1)
    return np.array([pot.value(row) for row in coords], dtype=float)


def kinetic_symbol(momenta: NDArray[np.float64], mass: float, relativistic: bool, derivative: bool = False) -> NDArray[np.float64]:
    """f(p) or f'(p) for one particle of mass `mass`."""
    if relativistic:
        root = np.sqrt(np.square(momenta) + mass**2)
        return momenta / root if derivative else root
    return momenta / mass if derivative else np.square(momenta) / (2.0 * mass)


def kinetic_matrix(cfg: ModelConfig, pgrid: ParticleGrid, hbar: float) -> sp.csr_matrix:
    """Σ_j f_j(p̂_j) on the particle grid, before the Fock factor."""
    momenta = pgrid.momenta(hbar)
    total = sp.csr_matrix((pgrid.n_points**cfg.n,) * 2, dtype=complex)
    for j, mass in enumerate(cfg.masses):
        symbol = kinetic_symbol(momenta, mass, cfg.relativistic)
        total = total + _embed_particle(_fourier_matrix(symbol), j, cfg.n, pgrid.n_points)
    return total.tocsr()


def assemble_hamiltonian(
    cfg: ModelConfig,
    pgrid: ParticleGrid,
    fbasis: FockBasis,
    hbar: float,
    dense_threshold: int = DENSE_THRESHOLD,
) -> HamiltonianAssembly:
    """Build Ĥ on the quantum mode set of `cfg` (one Fock mode per k-point)."""
    if not 0 < hbar <= 1:
        raise ConfigurationError(f"hbar must lie in (0, 1], got {hbar}")
    if fbasis.n_modes != cfg.kgrid.size:
        raise ShapeError(f"Fock basis has {fbasis.n_modes} modes, model has {cfg.kgrid.size} k-points")

    n = cfg.n
    coords = _particle_coordinates(pgrid, n)
    n_particle = coords.shape[0]
    fock_id = sp.identity(fbasis.dimension, format="csr")

    kinetic = sp.kron(kinetic_matrix(cfg, pgrid, hbar), fock_id, format="csr")
    potential = _potential_diagonal(cfg, coords)
    field_free = dgamma_diagonal(cfg.omega, fbasis, hbar)

    ladders = mode_ladder(fbasis, hbar)
    weights = np.sqrt(cfg.kgrid.weight) * cfg.coupling
    interaction = sp.csr_matrix((n_particle * fbasis.dimension,) * 2, dtype=complex)
    for j in range(n):
        phases = np.exp(2j * np.pi * np.outer(coords[:, j], cfg.kgrid.points))
        for i, lower in enumerate(ladders):
            if weights[i] == 0:
                continue
            term = sp.kron(sp.diags(weights[i] * phases[:, i]), lower, format="csr")
            interaction = interaction + term + term.conj().T
    interaction = interaction.tocsr()

    total = (
        kinetic
        + sp.diags(np.repeat(potential, fbasis.dimension))
        + sp.diags(np.tile(field_free, n_particle))
        + interaction
    ).tocsr()

    deficit = _hermiticity_deficit(total)
    if deficit > HERMITICITY_TOLERANCE:
        logger.error(f"Assembled Hamiltonian deviates from Hermitian by {deficit:.3e}")
        raise AssemblyError(f"Hamiltonian Hermiticity deficit {deficit:.3e} exceeds {HERMITICITY_TOLERANCE:g}")

    logger.debug(f"Assembled Hamiltonian: dim={total.shape[0]}, nnz={total.nnz}, hbar={hbar:g}")
    return HamiltonianAssembly(
        hbar=hbar,
        cfg=cfg,
        pgrid=pgrid,
        fbasis=fbasis,
        kinetic=kinetic,
        potential=potential,
        field_free=field_free,
        interaction=interaction,
        total=total,
        coordinates=coords,
        dense_threshold=dense_threshold,
    )


# ----------------------------------------------------------------------------
# evolution
# ----------------------------------------------------------------------------

def _lanczos(apply, vstart: NDArray[np.complex128], numiter: int):
    """Lanczos tridiagonalization; stops early on an invariant subspace.

    Returns (alpha, beta, V, residual) with V holding the Krylov vectors as
    columns and `residual` the norm of the next, unused Lanczos vector.
    """
    nrmv = np.linalg.norm(vstart)
    V = np.zeros((numiter, vstart.size), dtype=complex)
    alpha = np.zeros(numiter)
    beta = np.zeros(numiter)
    V[0] = vstart / nrmv
    residual = 0.0
    m = numiter
    for j in range(numiter):
        w = apply(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalization
        w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = float(np.linalg.norm(w))
        if j == numiter - 1:
            residual = b
            break
        if b < 1e-14 * max(1.0, abs(alpha[j])):
            m = j + 1
            break
        beta[j] = b
        V[j + 1] = w / b
    return alpha[:m], beta[: m - 1], V[:m].T, residual


def _krylov_step(
    total: sp.csr_matrix,
    vec: NDArray[np.complex128],
    tau: float,
    numiter: int,
    tol: float,
) -> NDArray[np.complex128]:
    """e^{-iτĤ} vec with an a-posteriori error estimate."""
    numiter = max(2, min(numiter, vec.size))
    alpha, beta, V, residual = _lanczos(lambda v: total @ v, vec, numiter)
    if alpha.size == 1:
        evals, evecs = alpha, np.ones((1, 1))
    else:
        evals, evecs = eigh_tridiagonal(alpha, beta)
    coeffs = evecs @ (np.exp(-1j * tau * evals) * evecs[0].conj())
    norm = np.linalg.norm(vec)
    estimate = residual * abs(coeffs[-1]) * norm
    if estimate > tol:
        raise KrylovConvergenceError(f"Lanczos subspace of size {alpha.size} too small", error_estimate=estimate)
    return norm * (V @ coeffs)


def _evolve_krylov(H: HamiltonianAssembly, vec: NDArray[np.complex128], t: float) -> NDArray[np.complex128]:
    n_steps = max(1, int(np.ceil(abs(t) / KRYLOV_DT)))
    tau = t / n_steps / H.hbar
    current = vec
    for _ in range(n_steps):
        retryer = Retrying(
            stop=stop_after_attempt(3),
            retry=retry_if_exception_type(KrylovConvergenceError),
            reraise=False,
        )
        try:
            for attempt in retryer:
                with attempt:
                    size = KRYLOV_SUBSPACE * 2 ** (attempt.retry_state.attempt_number - 1)
                    current = _krylov_step(H.total, current, tau, size, KRYLOV_TOLERANCE)
        except RetryError as e:
            cause = e.last_attempt.exception()
            logger.error(f"Krylov evolution failed: {cause}")
            raise EvolutionError(f"Krylov stepping did not converge: {cause}") from cause
    return current


def evolve(psi0: QuantumState, H: HamiltonianAssembly, t: float) -> QuantumState:
    """ψ(t) = e^{-itĤ/ħ} ψ₀."""
    H.check_state(psi0)
    norm0 = psi0.norm()
    if abs(norm0 - 1.0) > NORM_TOLERANCE:
        raise ConfigurationError(f"initial state must be normalized, |psi0| = {norm0:.12g}")
    if t == 0:
        return psi0.with_coefficients(psi0.coefficients.copy())

    vec = psi0.vector
    if H.is_dense:
        evals, evecs = H.eigensystem()
        out = evecs @ (np.exp(-1j * t * evals / H.hbar) * (evecs.conj().T @ vec))
    else:
        out = _evolve_krylov(H, vec, t)

    drift = abs(float(np.linalg.norm(out)) - 1.0)
    if drift > NORM_TOLERANCE:
        logger.warning(f"Norm drift {drift:.3e} after evolving to t={t:g}")
    return psi0.with_coefficients(out)


def interaction_picture(psi: QuantumState, H: HamiltonianAssembly, t: float) -> QuantumState:
    """e^{itĤ₀₂/ħ} ψ, exact because dΓ(ω) is diagonal in occupations."""
    H.check_state(psi)
    phase = np.exp(1j * t * H.field_free / H.hbar)
    return psi.with_coefficients(psi.coefficients * phase[None, :])


# ----------------------------------------------------------------------------
# particle Weyl operator
# ----------------------------------------------------------------------------

def _fourier_multiply(
    tensor: NDArray[np.complex128],
    symbol: NDArray[np.complex128],
    axis: int,
) -> NDArray[np.complex128]:
    shape = [1] * tensor.ndim
    shape[axis] = symbol.size
    return np.fft.ifft(symbol.reshape(shape) * np.fft.fft(tensor, axis=axis), axis=axis)


def _along_axis(values: NDArray, axis: int, ndim: int) -> NDArray:
    shape = [1] * ndim
    shape[axis] = values.size
    return values.reshape(shape)


@dataclass(frozen=True, eq=False)
class ParticleWeyl:
    """W₁(z) = e^{i(p₀·q̂ − q₀·p̂)} for z = q₀ + ip₀.

    Applied as e^{ip₀·q̂} followed by the Fourier translation by ħq₀ and the
    phase e^{-iħp₀·q₀/2}, so that W₁(z)W₁(z') = e^{-i(ħ/2)Im⟨z,z'⟩}W₁(z+z').
    """

    z0: NDArray[np.complex128]
    hbar: float
    pgrid: ParticleGrid

    @property
    def shift(self) -> NDArray[np.float64]:
        return self.hbar * self.z0.real

    @property
    def momentum(self) -> NDArray[np.float64]:
        return self.z0.imag

    def apply_tensor(self, tensor: NDArray[np.complex128]) -> NDArray[np.complex128]:
        """Act on an array whose first n axes are particle coordinates."""
        out = np.asarray(tensor, dtype=complex)
        kappa = self.pgrid.wavenumbers
        for j in range(self.z0.size):
            if self.shift[j] != 0:
                out = _fourier_multiply(out, np.exp(-1j * kappa * self.shift[j]), axis=j)
            if self.momentum[j] != 0:
                out = out * _along_axis(np.exp(1j * self.momentum[j] * self.pgrid.x), j, out.ndim)
        phase = np.exp(-0.5j * self.hbar * float(np.dot(self.momentum, self.z0.real)))
        return phase * out

    def apply(self, psi: QuantumState) -> QuantumState:
        if psi.n_particles != self.z0.size:
            raise ShapeError(f"Weyl point has {self.z0.size} particle components, state has {psi.n_particles}")
        return psi.with_coefficients(self.apply_tensor(psi.tensor))

    def matrix(self) -> NDArray[np.complex128]:
        """Dense single-particle matrix (n = 1 only)."""
        if self.z0.size != 1:
            raise ShapeError("dense Weyl matrix is only available for one particle")
        return self.apply_tensor(np.eye(self.pgrid.n_points, dtype=complex))


def weyl_particle(
    z0: NDArray[np.complex128] | complex,
    hbar: float,
    pgrid: ParticleGrid,
    min_shift: float = 0.0,
) -> ParticleWeyl:
    """Particle Weyl operator with the wrap guard |ħq₀| < L/2.

    `min_shift` (in grid cells) optionally rejects nonzero translations
    shorter than that many cells.
    """
    z = np.atleast_1d(np.asarray(z0, dtype=complex))
    if not 0 < hbar <= 1:
        raise ConfigurationError(f"hbar must lie in (0, 1], got {hbar}")
    shift = np.abs(hbar * z.real)
    if np.any(shift >= 0.5 * pgrid.length):
        raise GuardViolationError(
            f"translation hbar*q0 = {float(shift.max()):.4g} wraps the periodic box of length {pgrid.length:g}",
            hint="enlarge box_length or shrink the test point",
        )
    if min_shift > 0 and np.any((shift > 0) & (shift < min_shift * pgrid.spacing)):
        raise GuardViolationError(
            f"translation {float(shift[shift > 0].min()):.3g} is below {min_shift:g} grid cells",
            hint="increase particle_points",
        )
    return ParticleWeyl(z0=z, hbar=hbar, pgrid=pgrid)


# ----------------------------------------------------------------------------
# states
# ----------------------------------------------------------------------------

def gaussian_packet(
    centre: float,
    momentum: float,
    hbar: float,
    pgrid: ParticleGrid,
) -> NDArray[np.complex128]:
    """√Δx-scaled coefficients of the displaced (πħ)^{-1/4} e^{-x²/2ħ}, unit norm."""
    base = (np.pi * hbar) ** -0.25 * np.exp(-np.square(pgrid.x) / (2.0 * hbar))
    coeffs = np.sqrt(pgrid.spacing) * base.astype(complex)
    weyl = weyl_particle(complex(centre, momentum) / hbar, hbar, pgrid)
    out = weyl.apply_tensor(coeffs)
    return out / np.linalg.norm(out)


def _check_particle_guards(q: NDArray[np.float64], hbar: float, pgrid: ParticleGrid, width_cells: float) -> None:
    width = np.sqrt(hbar)
    if width < width_cells * pgrid.spacing:
        raise GuardViolationError(
            f"gaussian width sqrt(hbar) = {width:.4g} is below {width_cells:g} grid cells ({pgrid.spacing:.4g} each)",
            hint="increase particle_points or hbar",
        )
    reach = float(np.max(np.abs(q))) + 4.0 * width
    if reach > 0.5 * pgrid.length:
        raise GuardViolationError(
            f"wavepacket reaches {reach:.4g} beyond the half box {0.5 * pgrid.length:g}",
            hint="enlarge box_length or move the initial position inward",
        )


def coherent_state(
    u0: ClassicalState,
    hbar: float,
    pgrid: ParticleGrid,
    fbasis: FockBasis,
    cfg: ModelConfig,
    width_cells: float = 1.0,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> QuantumState:
    """Displaced gaussian per particle ⊗ coherent field, centred at u₀."""
    cfg.kgrid.check_field(u0.alpha)
    if u0.p.size != cfg.n:
        raise ShapeError(f"initial state has {u0.p.size} particles, model has {cfg.n}")
    _check_particle_guards(u0.q, hbar, pgrid, width_cells)

    particle = np.ones(1, dtype=complex)
    for qj, pj in zip(u0.q, u0.p, strict=True):
        particle = np.kron(particle, gaussian_packet(float(qj), float(pj), hbar, pgrid))
    field_vec = coherent_field(u0.alpha, hbar, fbasis, cfg.kgrid.weight, leakage_threshold)
    coeffs = np.outer(particle, field_vec.coefficients)
    return QuantumState(coeffs / np.linalg.norm(coeffs), hbar=hbar, n_particles=cfg.n, grid_points=pgrid.n_points)


def random_wavepacket_state(
    H: HamiltonianAssembly,
    rng: np.random.Generator,
    n_packets: int = 2,
    p_cap: float = 0.2,
    field_alpha: NDArray[np.complex128] | None = None,
) -> QuantumState:
    """Random superposition of gaussian packets ⊗ a field vector.

    Centres are drawn in classical units (|q| ≤ L/4, |p| ≤ p_cap), so the same
    generator state yields the same classical picture at every ħ. The field
    factor is the coherent vector of `field_alpha`, or a Haar-random
    safe-sector vector when it is None.
    """
    pgrid = H.pgrid
    hbar = H.hbar
    q_cap = 0.25 * pgrid.length
    particle = np.zeros(H.particle_dimension, dtype=complex)
    for _ in range(n_packets):
        packet = np.ones(1, dtype=complex)
        for _j in range(H.n_particles):
            packet = np.kron(packet, gaussian_packet(rng.uniform(-q_cap, q_cap), rng.uniform(-p_cap, p_cap), hbar, pgrid))
        particle += complex(rng.standard_normal(), rng.standard_normal()) * packet
    particle /= np.linalg.norm(particle)
    if field_alpha is None:
        fock = random_safe_vector(H.fbasis, hbar, rng)
    else:
        fock = coherent_field(field_alpha, hbar, H.fbasis, H.cfg.kgrid.weight)
    return QuantumState(np.outer(particle, fock.coefficients), hbar=hbar, n_particles=H.n_particles,
                        grid_points=pgrid.n_points)


# ----------------------------------------------------------------------------
# observables
# ----------------------------------------------------------------------------

def apply_momentum(psi: QuantumState, H: HamiltonianAssembly, j: int, power: int = 1) -> NDArray[np.complex128]:
    """p̂_j^power ψ as a (P, D) matrix."""
    symbol = H.pgrid.momenta(H.hbar) ** power
    return _fourier_multiply(psi.tensor, symbol.astype(complex), axis=j).reshape(psi.coefficients.shape)


def _momentum_moments(psi: QuantumState, hbar: float, pgrid: ParticleGrid, j: int) -> tuple[float, float]:
    amplitudes = np.fft.fft(psi.tensor, axis=j)
    weights = np.sum(np.abs(amplitudes) ** 2, axis=tuple(a for a in range(amplitudes.ndim) if a != j))
    weights = weights / pgrid.n_points
    momenta = pgrid.momenta(hbar)
    return float(np.sum(weights * momenta)), float(np.sum(weights * momenta**2))


def expectation(op: sp.spmatrix | NDArray[np.complex128], psi: QuantumState) -> complex:
    vec = psi.vector
    applied = op * vec if isinstance(op, np.ndarray) and op.ndim == 1 else op @ vec
    return complex(np.vdot(vec, applied))


def observables(psi: QuantumState, H: HamiltonianAssembly) -> ObservableRecord:
    """Expectation values used by the sweep, the estimates and the exports."""
    H.check_state(psi)
    hbar = H.hbar
    norm2 = psi.norm() ** 2
    density = np.sum(np.abs(psi.coefficients) ** 2, axis=1)

    q_mean, q_second, p_mean, p_second = [], [], [], []
    for j in range(H.n_particles):
        x = H.coordinates[:, j]
        q_mean.append(float(np.sum(density * x) / norm2))
        q_second.append(float(np.sum(density * x**2) / norm2))
        first, second = _momentum_moments(psi, hbar, H.pgrid, j)
        p_mean.append(first / norm2)
        p_second.append(second / norm2)

    coeffs = psi.coefficients
    modes = [complex(np.vdot(coeffs, (ladder @ coeffs.T).T) / norm2) for ladder in mode_ladder(H.fbasis, hbar)]
    shell_weights = np.sum(np.abs(coeffs) ** 2, axis=0)
    number = float(np.sum(shell_weights * hbar * H.fbasis.total) / norm2)
    moment_diag = dgamma_diagonal(H.cfg.omega ** (2.0 * H.cfg.sigma), H.fbasis, hbar)
    field_moment = float(np.sum(shell_weights * moment_diag) / norm2)
    energy = float(real_part(expectation(H.total, psi), "energy expectation") / norm2)
    top = float(np.sum(shell_weights[H.fbasis.top_shell()]) / norm2)

    return ObservableRecord(
        q_mean=q_mean,
        p_mean=p_mean,
        q_second=q_second,
        p_second=p_second,
        field_modes=modes,
        number=number,
        field_moment=field_moment,
        energy=energy,
        top_shell_weight=top,
    )


# ----------------------------------------------------------------------------
# constants and symbols
# ----------------------------------------------------------------------------

def equivalence_constants(cfg: ModelConfig) -> dict[str, float]:
    """(a, b, c, C) with c⟨Ĥ+a⟩ ≤ ⟨Ĥ₀+b⟩ ≤ C⟨Ĥ+a⟩, from Cauchy-Schwarz on Ĥ₁.

    Ĥ₁ couples each particle to the field through g = χ/√ω, and
    |⟨â(g e^{-2πikq})⟩| ≤ ‖ω^{-1/2}g‖ ⟨dΓ(ω)⟩^{1/2} with ‖ω^{-1/2}g‖ = ‖χ/ω‖.
    Hence |⟨Ĥ₁⟩| ≤ ½⟨dΓ(ω)⟩ + 2n²‖χ/ω‖², so Ĥ ≥ ½Ĥ₀ − ‖V‖∞ − 2n²‖χ/ω‖².
    Using ‖ω^{-1/2}χ‖ instead would bound a form factor χ coupled without
    the 1/√ω weight; since ω ≥ m_f it is never smaller for m_f ≥ 1.
    """
    coupling = 2.0 * cfg.n**2 * chi_norm(cfg, -1.0) ** 2
    sup_v = float(cfg.potential.sup_norm)
    if not np.isfinite(sup_v):
        raise ConfigurationError("equivalence constants need a bounded potential")
    a = sup_v + coupling + 1.0
    return {
        "a": a,
        "b": 1.0,
        "c": 1.0 / max(1.5, sup_v + coupling + a),
        "C": 2.0,
    }


def b0_operator(s: float, xi: TestPoint, H: HamiltonianAssembly) -> sp.csr_matrix:
    """Quantization of b(s, ξ, ·) acting on interaction-picture states.

    Built from f'_j(p̂_j), ∂_jV(q̂) and the ladder operators â_i, which play the
    role of √Δk α̃_i in the interaction picture.
    """
    cfg = H.cfg
    n = cfg.n
    cfg.kgrid.check_field(xi.alpha0)
    if xi.p0.size != n:
        raise ShapeError(f"test point has {xi.p0.size} particle components, model has {n}")

    fock_id = sp.identity(H.fock_dimension, format="csr")
    momenta = H.pgrid.momenta(H.hbar)
    out = sp.csr_matrix((H.dimension, H.dimension), dtype=complex)
    for j, mass in enumerate(cfg.masses):
        if xi.p0[j] == 0:
            continue
        symbol = kinetic_symbol(momenta, mass, cfg.relativistic, derivative=True)
        grad_f = _embed_particle(_fourier_matrix(symbol), j, n, H.pgrid.n_points)
        out = out - xi.p0[j] * sp.kron(grad_f, fock_id, format="csr")

    coords = H.coordinates
    grad_v = np.array([cfg.potential.gradient(row) for row in coords], dtype=float).reshape(-1, n)
    diag = -(grad_v @ xi.q0)

    ladders = mode_ladder(H.fbasis, H.hbar)
    k = cfg.kgrid.points
    rotation = np.exp(1j * s * cfg.omega)
    for j in range(n):
        phase = np.exp(-2j * np.pi * np.outer(coords[:, j], k))
        b0 = 2j * np.pi * k * xi.q0[j] * cfg.coupling * rotation * phase
        for i, lower in enumerate(ladders):
            term = np.sqrt(cfg.kgrid.weight) * sp.kron(sp.diags(b0[:, i]), lower.conj().T, format="csr")
            out = out + term + term.conj().T
        g = cfg.coupling * rotation * phase
        diag = diag + np.sqrt(2.0) * np.imag(cfg.kgrid.weight * (np.conj(g) @ xi.alpha0))

    return (out + sp.diags(np.repeat(diag, H.fock_dimension))).tocsr()
