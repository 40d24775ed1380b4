"""
Property-suite runner certifying the operator inequalities on random inputs.

Every inequality case reports max(lhs/rhs) over its samples and passes when
that ratio is at most 1 + tolerance. Identity cases report 1 + error. Only the
propagation envelopes are fitted (once, at the largest ħ) and frozen.
"""

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from app.core.exceptions import ConfigurationError, PropertyViolationError, ShapeError
from app.models import ClassicalState, EstimateCase, ModelConfig, ParticleGrid, QuantumState
from app.services.classical_dynamics import (
    gronwall_divergence,
    integrability_constant,
    nonlinearity_N,
    nonlinearity_bound,
    vector_field_v,
)
from app.services.export import write_replay
from app.services.fock_space import (
    DEFAULT_LEAKAGE_THRESHOLD,
    FockBasis,
    annihilate,
    annihilation_matrix,
    create,
    creation_matrix,
    dgamma_diagonal,
    number_diagonal,
    random_safe_vector,
    weyl_field,
)
from app.services.model_core import (
    grad_I,
    gradient_bound,
    gradient_lipschitz_bound,
    inner,
    weighted_norm,
    xsigma_norm,
)
from app.services.nelson import (
    HamiltonianAssembly,
    apply_momentum,
    assemble_hamiltonian,
    coherent_state,
    equivalence_constants,
    evolve,
    expectation,
    observables,
    random_wavepacket_state,
    weyl_particle,
)

logger = logging.getLogger(__name__)

EPSILON = 0.5
IDENTITY_TOLERANCE = 1e-9
TREND_SLACK = 0.2
ENVELOPE_MARGIN = 1.25
WEYL_FIELD_NORM = 0.5
FIELD_NUMBER_FRACTION = 0.05
PARTICLE_MOMENTUM_CAP = 0.2


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else float("inf")


def _case(
    name: str,
    lemma: str,
    recipe: str,
    hbar: float | None,
    ratios: Sequence[float],
    tolerance: float,
    vectors: Sequence[NDArray[np.complex128]] | None = None,
    fitted: bool = False,
) -> EstimateCase:
    values = np.asarray(ratios, dtype=float)
    worst_index = int(np.argmax(values)) if values.size else 0
    worst = float(values[worst_index]) if values.size else 0.0
    passed = bool(np.isfinite(worst) and worst <= 1.0 + tolerance)
    violation: dict[str, Any] | None = None
    if not passed:
        violation = {"sample": worst_index, "ratio": worst}
        if vectors is not None:
            flat = np.asarray(vectors[worst_index]).reshape(-1)
            violation["vector"] = [[float(z.real), float(z.imag)] for z in flat]
        hbar_note = f" at hbar={hbar:g}" if hbar is not None else ""
        logger.error(f"Estimate {name}{hbar_note} failed: worst ratio {worst:.6g} > 1 + {tolerance:g}")
    return EstimateCase(
        name=name,
        lemma=lemma,
        recipe=recipe,
        hbar=hbar,
        samples=int(values.size),
        tolerance=tolerance,
        worst_ratio=worst,
        passed=passed,
        fitted=fitted,
        violation=violation,
    )


def _random_mode(rng: np.random.Generator, n_modes: int, dk: float) -> NDArray[np.complex128]:
    """Random mode function of unit Δk-weighted norm."""
    f = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)
    return f / np.sqrt(dk * np.sum(np.abs(f) ** 2))


# ============================================================================
# FOCK-SPACE CASES
# ============================================================================

def _fock_cases(cfg: ModelConfig, fbasis: FockBasis, hbar: float, seed: int, samples: int) -> list[EstimateCase]:
    # the generator ignores hbar, so every hbar sees the same coefficient draws
    rng = np.random.default_rng([seed, 1])
    dk = cfg.kgrid.weight
    modes = cfg.kgrid.size
    number = number_diagonal(fbasis, hbar)
    free_field = dgamma_diagonal(cfg.omega, fbasis, hbar)
    m_f = cfg.dispersion.m_f
    b_eps = np.sqrt(1.0 + 1.0 / (4.0 * EPSILON**2))

    annihilation, creation, commutator, field_number, free_energy, number_root, weyl = ([] for _ in range(7))
    vectors = []
    for _ in range(samples):
        psi = random_safe_vector(fbasis, hbar, rng)
        c = psi.coefficients
        vectors.append(c)
        f = _random_mode(rng, modes, dk)
        g = _random_mode(rng, modes, dk)

        root_number = np.sqrt(np.sum(number * np.abs(c) ** 2))
        root_shifted = np.sqrt(np.sum((number + 1.0) * np.abs(c) ** 2))
        annihilation.append(_ratio(annihilate(f, psi, dk).norm(), root_number))
        creation.append(_ratio(create(f, psi, dk).norm(), root_shifted))

        a_f = annihilation_matrix(f, fbasis, hbar, dk)
        a_g_star = creation_matrix(g, fbasis, hbar, dk)
        bracket = a_f @ (a_g_star @ c) - a_g_star @ (a_f @ c)
        error = np.linalg.norm(bracket - hbar * inner(f, g, cfg.kgrid) * c)
        commutator.append(1.0 + float(error))

        field_number.append(_ratio(m_f * np.linalg.norm(number * c), np.linalg.norm(free_field * c)))

        big_f = _random_mode(rng, modes, dk)
        f_over_root = weighted_norm(big_f, cfg, -0.5)
        free_energy.append(_ratio(
            annihilate(big_f, psi, dk).norm(),
            f_over_root * np.sqrt(np.sum((free_field + 1.0) * np.abs(c) ** 2)),
        ))

        number_root.append(_ratio(root_shifted, EPSILON * np.linalg.norm(number * c) + b_eps * psi.norm()))

        beta = WEYL_FIELD_NORM * _random_mode(rng, modes, dk)
        displaced = weyl_field(beta, hbar, fbasis, dk) @ c
        constant = np.sqrt(max(2.0, 1.0 + hbar**2 * WEYL_FIELD_NORM**2))
        weyl.append(_ratio(np.sqrt(np.sum((number + 1.0) * np.abs(displaced) ** 2)), constant * root_shifted))

    return [
        _case("annihilation-bound", "annihilation bounded by the number operator",
              "|a(f)psi| <= |f| |N^(1/2) psi|", hbar, annihilation, 0.0, vectors),
        _case("creation-bound", "creation bounded by the shifted number operator",
              "|a*(f)psi| <= |f| |(N+1)^(1/2) psi|", hbar, creation, 0.0, vectors),
        _case("commutator-identity", "canonical commutation relation on the safe sector",
              "[a(f), a*(g)] psi = hbar <f,g> psi", hbar, commutator, IDENTITY_TOLERANCE, vectors),
        _case("field-number", "free field energy dominates the number operator",
              "m_f |N psi| <= |dGamma(omega) psi|", hbar, field_number, 0.0, vectors),
        _case("field-by-free-energy", "smeared annihilation bounded by the free field energy",
              "|a(F)psi| <= |F/sqrt(omega)| |(dGamma(omega)+1)^(1/2) psi|", hbar, free_energy, 0.0, vectors),
        _case("number-root", "square root of the number operator by the number operator",
              f"|(N+1)^(1/2) psi| <= {EPSILON:g}|N psi| + sqrt(1 + 1/(4 eps^2))|psi|", hbar, number_root, 0.0,
              vectors),
        _case("weyl-field-bound", "field Weyl operator preserves the number domain",
              "|(N+1)^(1/2) W2(b) psi| <= sqrt(max(2, 1 + hbar^2 |b|^2)) |(N+1)^(1/2) psi|",
              hbar, weyl, 0.0, vectors),
    ]


# ============================================================================
# CASES ON THE FULL SPACE
# ============================================================================

def _phase_space_weight(coefficients: NDArray[np.complex128], H: HamiltonianAssembly) -> float:
    """⟨ψ, (Σ_j q̂_j² + p̂_j² + 1) ψ⟩."""
    psi = QuantumState(coefficients, hbar=H.hbar, n_particles=H.n_particles, grid_points=H.pgrid.n_points)
    density = np.sum(np.abs(coefficients) ** 2, axis=1)
    total = float(np.sum(density))
    for j in range(H.n_particles):
        total += float(np.sum(density * H.coordinates[:, j] ** 2))
        total += float(np.sum(np.abs(apply_momentum(psi, H, j)) ** 2))
    return total


def _state_cases(
    H: HamiltonianAssembly,
    seed: int,
    samples: int,
    field_norm2: float,
) -> list[EstimateCase]:
    rng = np.random.default_rng([seed, 2])
    cfg = H.cfg
    hbar = H.hbar
    dk = cfg.kgrid.weight
    consts = equivalence_constants(cfg)
    free = H.free
    shift_cap = H.pgrid.length / 8.0

    lower, upper, weyl, vectors = [], [], [], []
    for _ in range(samples):
        alpha = np.sqrt(field_norm2 * rng.uniform()) * _random_mode(rng, cfg.kgrid.size, dk)
        psi = random_wavepacket_state(H, rng, p_cap=PARTICLE_MOMENTUM_CAP, field_alpha=alpha)
        vectors.append(psi.coefficients)

        energy = expectation(H.total, psi).real
        free_energy = expectation(free, psi).real
        lower.append(_ratio(consts["c"] * (energy + consts["a"]), free_energy + consts["b"]))
        upper.append(_ratio(free_energy + consts["b"], consts["C"] * (energy + consts["a"])))

        shift = rng.uniform(-shift_cap, shift_cap, H.n_particles)
        boost = rng.uniform(-PARTICLE_MOMENTUM_CAP, PARTICLE_MOMENTUM_CAP, H.n_particles)
        w1 = weyl_particle((shift + 1j * boost) / hbar, hbar, H.pgrid)
        moved = w1.apply(psi)
        constant = np.sqrt(max(2.0, 1.0 + 2.0 * float(np.sum(shift**2 + boost**2))))
        weyl.append(_ratio(
            np.sqrt(_phase_space_weight(moved.coefficients, H)),
            constant * np.sqrt(_phase_space_weight(psi.coefficients, H)),
        ))

    recipe = (f"a = |V| + 2n^2|chi/omega|^2 + 1 = {consts['a']:.6g}, b = 1, "
              f"c = {consts['c']:.6g}, C = 2")
    return [
        _case("equivalence-lower", "Hamiltonian bounded by the free Hamiltonian",
              "c <H + a> <= <H0 + b>; " + recipe, hbar, lower, 0.0, vectors),
        _case("equivalence-upper", "free Hamiltonian bounded by the Hamiltonian",
              "<H0 + b> <= C <H + a>; " + recipe, hbar, upper, 0.0, vectors),
        _case("weyl-particle-bound", "particle Weyl operator preserves the phase-space domain",
              "|(q^2+p^2+1)^(1/2) W1(z) psi| <= sqrt(max(2, 1 + 2 hbar^2 |z|^2)) |(q^2+p^2+1)^(1/2) psi|",
              hbar, weyl, 0.0, vectors),
    ]


# ============================================================================
# PROPAGATION ENVELOPES
# ============================================================================

PROPAGATED = ("position-propagation", "momentum-propagation", "field-moment-propagation")


def propagation_series(
    H: HamiltonianAssembly,
    u0: ClassicalState,
    times: NDArray[np.float64],
    width_cells: float = 1.0,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> dict[str, NDArray[np.float64]]:
    """r(t) = ⟨O + 1⟩_t / ⟨ψ₀, (Ĥ₀ + O + 1) ψ₀⟩ for O = Σq̂², Σp̂², dΓ(ω^{2σ})."""
    psi0 = coherent_state(u0, H.hbar, H.pgrid, H.fbasis, H.cfg, width_cells, leakage_threshold)
    free0 = expectation(H.free, psi0).real
    values: dict[str, list[float]] = {name: [] for name in PROPAGATED}
    for t in times:
        obs = observables(evolve(psi0, H, float(t)), H)
        values["position-propagation"].append(sum(obs["q_second"]))
        values["momentum-propagation"].append(sum(obs["p_second"]))
        values["field-moment-propagation"].append(obs["field_moment"])
    series = {}
    for name, raw in values.items():
        arr = np.asarray(raw)
        series[name] = (arr + 1.0) / (free0 + arr[0] + 1.0)
    return series


def fit_envelope(times: NDArray[np.float64], ratio: NDArray[np.float64]) -> tuple[float, float]:
    """(C₁, C₂) with ratio(t) ≤ C₁ e^{C₂ t} on the given series."""
    growth = [np.log(r / ratio[0]) / t for t, r in zip(times, ratio, strict=True) if t > 0]
    c2 = max(0.0, max(growth, default=0.0))
    return ENVELOPE_MARGIN * float(ratio[0]), float(c2)


def _propagation_cases(
    hbar_list: Sequence[float],
    series: Sequence[dict[str, NDArray[np.float64]]],
    times: NDArray[np.float64],
) -> list[EstimateCase]:
    cases = []
    for name in PROPAGATED:
        c1, c2 = fit_envelope(times, series[0][name])
        envelope = c1 * np.exp(c2 * times)
        for hbar, per_hbar in zip(hbar_list, series, strict=True):
            cases.append(_case(
                name, "moment propagation along the quantum evolution",
                f"<O+1>_t <= C1 e^(C2 t) <H0+O+1>_0 with C1={c1:.6g}, C2={c2:.6g} fitted at hbar={hbar_list[0]:g}",
                hbar, per_hbar[name] / envelope, 0.0, fitted=True,
            ))
    return cases


def _trend_cases(cases: Sequence[EstimateCase], hbar_list: Sequence[float]) -> list[EstimateCase]:
    if len(hbar_list) < 2:
        return []
    largest, smallest = hbar_list[0], hbar_list[-1]
    by_name: dict[str, dict[float, float]] = {}
    for case in cases:
        if case.fitted or case.hbar is None:
            continue
        by_name.setdefault(case.name, {})[case.hbar] = case.worst_ratio
    trends = []
    for name, worst in by_name.items():
        if largest not in worst or smallest not in worst:
            continue
        ratio = _ratio(worst[smallest], worst[largest])
        trends.append(_case(
            f"{name}-trend", "hbar-uniform constants",
            f"worst ratio at hbar={smallest:g} within {TREND_SLACK:.0%} of hbar={largest:g}",
            None, [ratio], TREND_SLACK,
        ))
    return trends


# ============================================================================
# SUITES
# ============================================================================

def run_suite(
    cfg: ModelConfig,
    pgrid: ParticleGrid,
    fbasis: FockBasis,
    hbar_list: Sequence[float],
    seed: int,
    u0: ClassicalState | None = None,
    samples: int = 1000,
    state_samples: int = 200,
    horizon: float = 2.0,
    n_times: int = 9,
    width_cells: float = 1.0,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
    max_workers: int = 1,
    raise_on_failure: bool = True,
    replay_dir: Path | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> list[EstimateCase]:
    """Every quantum estimate case at every ħ, then the fitted envelopes and trends."""
    if not hbar_list:
        raise ConfigurationError("the estimate suite needs at least one hbar value")
    if any(b >= a for a, b in zip(hbar_list, hbar_list[1:], strict=False)):
        raise ConfigurationError(f"hbar values must be strictly decreasing, got {list(hbar_list)}")
    if cfg.kgrid.size != fbasis.n_modes:
        raise ShapeError(f"model has {cfg.kgrid.size} modes, Fock basis has {fbasis.n_modes}")
    if u0 is None:
        u0 = ClassicalState(0.5 * np.ones(cfg.n), np.zeros(cfg.n), np.zeros(cfg.kgrid.size, dtype=complex))
    times = np.linspace(0.0, horizon, n_times)
    field_norm2 = FIELD_NUMBER_FRACTION * min(hbar_list)

    def job(hbar: float) -> tuple[list[EstimateCase], dict[str, NDArray[np.float64]]]:
        logger.info(f"Running estimate cases at hbar={hbar:g}")
        H = assemble_hamiltonian(cfg, pgrid, fbasis, hbar)
        cases = _fock_cases(cfg, fbasis, hbar, seed, samples)
        cases += _state_cases(H, seed, state_samples, field_norm2)
        return cases, propagation_series(H, u0, times, width_cells, leakage_threshold)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        outcomes = list(pool.map(job, hbar_list))

    cases = [case for per_hbar, _ in outcomes for case in per_hbar]
    cases += _propagation_cases(hbar_list, [series for _, series in outcomes], times)
    cases += _trend_cases(cases, hbar_list)
    logger.info(f"Estimate suite: {sum(c.passed for c in cases)}/{len(cases)} cases passed")
    if raise_on_failure:
        ensure_passed(cases, replay_dir, metadata)
    return cases


def _random_classical(rng: np.random.Generator, cfg: ModelConfig, scale: float = 1.0) -> ClassicalState:
    k = cfg.kgrid.size
    return ClassicalState(
        scale * rng.standard_normal(cfg.n),
        scale * rng.uniform(-2.0, 2.0, cfg.n),
        0.5 * scale * (rng.standard_normal(k) + 1j * rng.standard_normal(k)),
    )


def run_classical_suite(
    cfg: ModelConfig,
    seed: int,
    samples: int = 1000,
    pairs: int = 100,
    horizon: float = 5.0,
    dt: float = 1e-2,
    save_stride: int = 10,
    perturbation: float = 1e-3,
    max_workers: int = 1,
) -> list[EstimateCase]:
    """Gradient, boundedness, integrability and Gronwall cases of the classical flow."""
    rng = np.random.default_rng([seed, 10])
    grad_ratios, lipschitz_ratios, bounded_ratios, integrable_ratios = [], [], [], []
    c_int = integrability_constant(cfg)
    for _ in range(samples):
        u = _random_classical(rng, cfg)
        w = _random_classical(rng, cfg)
        j = int(rng.integers(cfg.n))
        grad_ratios.append(_ratio(abs(grad_I(u.q, u.alpha, j, cfg)), gradient_bound(u.alpha, cfg)))
        lipschitz_ratios.append(_ratio(
            abs(grad_I(u.q, u.alpha, j, cfg) - grad_I(w.q, w.alpha, j, cfg)),
            gradient_lipschitz_bound(u.q, u.alpha, w.q, w.alpha, j, cfg),
        ))
        radius = xsigma_norm(u, 0.0, cfg)
        bounded_ratios.append(_ratio(
            xsigma_norm(nonlinearity_N(u, cfg), cfg.sigma, cfg), nonlinearity_bound(cfg, radius)))
        s = float(rng.uniform(0.0, horizon))
        integrable_ratios.append(_ratio(
            xsigma_norm(vector_field_v(s, u, cfg), cfg.sigma, cfg), c_int * (radius**2 + 1.0)))

    starts = []
    for _ in range(pairs):
        u0 = _random_classical(rng, cfg, scale=0.5)
        kick = _random_classical(rng, cfg, scale=perturbation)
        starts.append((u0, u0 + kick))

    def divergence(pair: tuple[ClassicalState, ClassicalState]) -> float:
        report = gronwall_divergence(pair[0], pair[1], horizon, dt, cfg, save_stride=save_stride)
        later = [row.gap / row.envelope for row in report.rows if row.t > 0 and row.envelope > 0]
        return max(later, default=0.0)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        gronwall_ratios = list(pool.map(divergence, starts))

    return [
        _case("interaction-gradient", "gradient of the interaction bounded by the field",
              "|grad I_j| <= 4 pi |omega^(1/2) chi| |alpha|", None, grad_ratios, 0.0),
        _case("interaction-gradient-lipschitz", "gradient of the interaction is Lipschitz",
              "|grad I_j(u1) - grad I_j(u2)| <= 4 pi A|a1-a2| + 8 sqrt(2) pi^2 B |q1-q2| |a2|_sigma",
              None, lipschitz_ratios, 0.0),
        _case("nonlinearity-bounded", "nonlinearity bounded on balls",
              "|N(u)|_(X^sigma) <= c1(|u|_(X^0))", None, bounded_ratios, 0.0),
        _case("vector-field-integrable", "interaction-picture vector field is integrable",
              f"|v(t,u)|_(X^sigma) <= C(|u|^2 + 1), C = {c_int:.6g}", None, integrable_ratios, 0.0),
        _case("gronwall-envelope", "nearby solutions separate at most exponentially",
              f"gap(t) <= exp(C t) gap(0) on [0, {horizon:g}], C from the field sup along both solutions",
              None, gronwall_ratios, 0.0),
    ]


def ensure_passed(
    cases: Sequence[EstimateCase],
    replay_dir: Path | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> None:
    """Raise PropertyViolationError naming every failing case; the first gets a replay file."""
    failing = [c for c in cases if not c.passed]
    if not failing:
        return
    replay_path = None
    if replay_dir is not None:
        first = failing[0]
        suffix = f"-hbar{first.hbar:g}" if first.hbar is not None else ""
        replay_path = str(write_replay(Path(replay_dir) / f"replay-{first.name}{suffix}.txt", first, metadata or {}))
    names = ", ".join(f"{c.name}" + (f"@hbar={c.hbar:g}" if c.hbar is not None else "") for c in failing)
    raise PropertyViolationError(f"{len(failing)} estimate case(s) failed: {names}", replay_path=replay_path)
