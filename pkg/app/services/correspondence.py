"""ħ → 0 harness: characteristic functions, the symbol b(s, ξ, u), residuals and sweeps."""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import trapezoid

from app.core.exceptions import ConfigurationError, GuardViolationError, ShapeError, TruncationOverflowError
from app.models import (
    ClassicalState,
    KGrid,
    ModelConfig,
    ParticleGrid,
    QuantumState,
    ResidualRecord,
    SweepReport,
    SweepRow,
    TestPoint,
)
from app.services.classical_dynamics import integrate, interaction_states, vector_field_v
from app.services.fock_space import DEFAULT_LEAKAGE_THRESHOLD, FockBasis, weyl_field
from app.services.model_core import inner, real_part
from app.services.nelson import (
    CHARACTERISTIC_CONVENTION,
    HamiltonianAssembly,
    assemble_hamiltonian,
    coherent_state,
    evolve,
    interaction_picture,
    observables,
    weyl_particle,
)

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 0.1
MONOTONE_FLOOR = 1e-9
LEAKAGE_FLAG = 1e-3
PUSHFORWARD_TOLERANCE = 1e-12

SWEEP_COLUMNS = ("q_error", "p_error", "field_error", "interaction_field_error", "characteristic_error")

Flow = Callable[[ClassicalState], ClassicalState]


def _check_point(xi: TestPoint, u: ClassicalState, kgrid: KGrid) -> None:
    kgrid.check_field(xi.alpha0)
    kgrid.check_field(u.alpha)
    if xi.p0.shape != u.p.shape:
        raise ShapeError(f"test point has {xi.p0.size} particle components, state has {u.p.size}")


# ----------------------------------------------------------------------------
# phase functions
# ----------------------------------------------------------------------------

def q_phase(xi: TestPoint, u: ClassicalState, kgrid: KGrid) -> complex:
    """Q(ξ, u) = i Im⟨z, z₀⟩ + √2 i Re⟨α₀, α⟩ with z = q + ip, z₀ = q₀ + ip₀."""
    _check_point(xi, u, kgrid)
    symplectic = float(np.dot(u.q, xi.p0) - np.dot(u.p, xi.q0))
    return 1j * symplectic + np.sqrt(2.0) * 1j * inner(xi.alpha0, u.alpha, kgrid).real


def pairing(xi: TestPoint, u: ClassicalState, kgrid: KGrid) -> float:
    """Re⟨ξ, u⟩_{X⁰} = q₀·q + p₀·p + Re⟨α₀, α⟩."""
    _check_point(xi, u, kgrid)
    return float(np.dot(xi.q0, u.q) + np.dot(xi.p0, u.p) + inner(xi.alpha0, u.alpha, kgrid).real)


def characteristic_classical(xi: TestPoint, u: ClassicalState, kgrid: KGrid) -> complex:
    return complex(np.exp(2j * np.pi * pairing(xi, u, kgrid)))


def characteristic_quantum(
    psi: QuantumState,
    xi: TestPoint,
    H: HamiltonianAssembly,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
) -> complex:
    """⟨ψ, W₁(−2πp₀ + i2πq₀) ⊗ W₂(√2 π α₀) ψ⟩."""
    H.check_state(psi)
    if xi.p0.size != H.n_particles:
        raise ShapeError(f"test point has {xi.p0.size} particle components, model has {H.n_particles}")
    H.cfg.kgrid.check_field(xi.alpha0)

    w1 = weyl_particle(-2.0 * np.pi * xi.p0 + 2j * np.pi * xi.q0, H.hbar, H.pgrid)
    w2 = weyl_field(np.sqrt(2.0) * np.pi * xi.alpha0, H.hbar, H.fbasis, H.cfg.kgrid.weight, leakage_threshold)
    displaced = w1.apply(psi).coefficients @ w2.T
    return complex(np.vdot(psi.coefficients, displaced) / psi.norm() ** 2)


def characteristic_oracle(u0: ClassicalState, xi: TestPoint, hbar: float, kgrid: KGrid) -> complex:
    """Closed form of `characteristic_quantum` on the coherent state centred at u₀."""
    _check_point(xi, u0, kgrid)
    particle_spread = float(np.sum(xi.q0**2) + np.sum(xi.p0**2))
    field_spread = float(inner(xi.alpha0, xi.alpha0, kgrid).real)
    damping = np.exp(-np.pi**2 * hbar * particle_spread - 0.5 * np.pi**2 * hbar * field_spread)
    return complex(np.exp(2j * np.pi * pairing(xi, u0, kgrid)) * damping)


# ----------------------------------------------------------------------------
# the symbol b(s, ξ, u)
# ----------------------------------------------------------------------------

def b_symbol(s: float, xi: TestPoint, u: ClassicalState, cfg: ModelConfig) -> float:
    """b(s, ξ, u) for an interaction-picture state u."""
    kgrid = cfg.kgrid
    _check_point(xi, u, kgrid)
    value = complex(
        -np.dot(cfg.kinetic_gradient(u.p), xi.p0)
        - np.dot(np.asarray(cfg.potential.gradient(u.q), dtype=float), xi.q0)
    )
    k = kgrid.points
    rotation = np.exp(1j * s * cfg.omega)
    for j in range(cfg.n):
        phase = np.exp(-2j * np.pi * k * u.q[j])
        g = cfg.coupling * phase * rotation
        b0 = 2j * np.pi * k * xi.q0[j] * g
        value += inner(u.alpha, b0, kgrid) + inner(b0, u.alpha, kgrid)
        value += (1j / np.sqrt(2.0)) * (inner(xi.alpha0, g, kgrid) - inner(g, xi.alpha0, kgrid))
    return float(real_part(value, "b symbol"))


def dual_point(xi: TestPoint) -> ClassicalState:
    """ξ̃ = (−q₀/2π, p₀/2π, α₀/(√2π)) in (p, q, α) order."""
    return ClassicalState(-xi.q0 / (2.0 * np.pi), xi.p0 / (2.0 * np.pi), xi.alpha0 / (np.sqrt(2.0) * np.pi))


def b_symbol_via_vector_field(s: float, xi: TestPoint, u: ClassicalState, cfg: ModelConfig) -> float:
    """−2π Re⟨v(s, u), ξ̃⟩_{X⁰}."""
    _check_point(xi, u, cfg.kgrid)
    v = vector_field_v(s, u, cfg)
    dual = dual_point(xi)
    real_inner = np.dot(v.p, dual.p) + np.dot(v.q, dual.q) + inner(v.alpha, dual.alpha, cfg.kgrid).real
    return float(-2.0 * np.pi * real_inner)


# ----------------------------------------------------------------------------
# characteristic equation
# ----------------------------------------------------------------------------

def _steps(span: float, step: float, what: str) -> int:
    count = int(round(span / step))
    if abs(count * step - span) > 1e-9 * max(1.0, span):
        raise ConfigurationError(f"{what} = {span:g} is not a multiple of {step:g}")
    return count


def characteristic_residual(
    samples: Sequence[ClassicalState],
    xi: TestPoint,
    t0: float,
    t: float,
    dt: float,
    cfg: ModelConfig,
    ode_dt: float | None = None,
    max_workers: int = 1,
    label: str = "",
) -> ResidualRecord:
    """Monte-Carlo residual of the characteristic equation on [t0, t].

    |E e(t) − E e(t0) − 2πi ∫ E[e(s) Re⟨v(s, ũ_s), ξ⟩] ds|, e(s) = e^{2πiRe⟨ξ, ũ_s⟩},
    with ũ the interaction-picture flow of each sample and the trapezoid rule
    of step `dt` in time. `standard_error` is the Monte-Carlo error of E e(t).
    """
    if not samples:
        raise ConfigurationError("characteristic residual needs at least one sample")
    if dt <= 0 or t < t0 or t0 < 0:
        raise ConfigurationError(f"need dt > 0 and 0 <= t0 <= t, got dt={dt}, t0={t0}, t={t}")
    if t == t0:
        return ResidualRecord(label=label, quadrature_dt=dt, residual=0.0, standard_error=0.0, samples=len(samples))

    if ode_dt is None:
        ode_dt = dt / max(1, int(np.ceil(dt / 0.01)))
    stride = _steps(dt, ode_dt, "quadrature step")
    first = _steps(t0, dt, "t0")
    last = _steps(t, dt, "t")
    y = xi.as_state()

    def run(u0: ClassicalState) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
        traj = integrate(u0, last * dt, ode_dt, cfg, picture="interaction", save_stride=stride)
        states = interaction_states(traj, cfg)[first:last + 1]
        times = traj.times[first:last + 1]
        phase = np.array([characteristic_classical(xi, u, cfg.kgrid) for u in states])
        velocity = np.array([
            np.dot(v.p, y.p) + np.dot(v.q, y.q) + inner(v.alpha, y.alpha, cfg.kgrid).real
            for v in (vector_field_v(s, u, cfg) for s, u in zip(times, states, strict=True))
        ])
        return phase, phase * velocity

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(run, samples))

    phases = np.array([r[0] for r in results])
    integrands = np.array([r[1] for r in results])
    grid = t0 + dt * np.arange(phases.shape[1])
    mean_phase = phases.mean(axis=0)
    integral = trapezoid(integrands.mean(axis=0), x=grid)
    residual = abs(mean_phase[-1] - mean_phase[0] - 2j * np.pi * integral)

    n = len(samples)
    spread = float(np.std(phases[:, -1])) if n > 1 else 0.0
    return ResidualRecord(
        label=label,
        quadrature_dt=dt,
        residual=float(residual),
        standard_error=spread / np.sqrt(n),
        samples=n,
    )


def sample_cloud(
    u0: ClassicalState,
    n_samples: int,
    rng: np.random.Generator,
    particle_spread: float = 0.1,
    field_spread: float = 0.05,
) -> list[ClassicalState]:
    """Gaussian cloud around u₀ in (p, q) and in each field mode amplitude."""
    if n_samples < 1:
        raise ConfigurationError(f"need at least one sample, got {n_samples}")
    cloud = []
    for _ in range(n_samples):
        dp = particle_spread * rng.standard_normal(u0.p.size)
        dq = particle_spread * rng.standard_normal(u0.q.size)
        dalpha = field_spread * (rng.standard_normal(u0.alpha.size) + 1j * rng.standard_normal(u0.alpha.size))
        cloud.append(ClassicalState(u0.p + dp, u0.q + dq, u0.alpha + dalpha))
    return cloud


def build_test_panel(n: int, n_modes: int, seed: int, magnitude: float = 0.1) -> list[TestPoint]:
    """8 fixed directions (particle, field, mixed) followed by 8 seeded random points."""
    m = 0.5 * magnitude
    centre = n_modes // 2
    e_mode = np.zeros(n_modes, dtype=complex)
    e_mode[centre] = 1.0
    ones = np.ones(n)
    fixed = [
        TestPoint(np.zeros(n), magnitude * ones, np.zeros(n_modes), "q-direction"),
        TestPoint(magnitude * ones, np.zeros(n), np.zeros(n_modes), "p-direction"),
        TestPoint(m * ones, m * ones, np.zeros(n_modes), "phase-space diagonal"),
        TestPoint(np.zeros(n), np.zeros(n), magnitude * e_mode, "field real"),
        TestPoint(np.zeros(n), np.zeros(n), 1j * magnitude * e_mode, "field imaginary"),
        TestPoint(np.zeros(n), np.zeros(n), m * np.ones(n_modes), "field all modes"),
        TestPoint(m * ones, np.zeros(n), m * e_mode, "mixed p-field"),
        TestPoint(np.zeros(n), -m * ones, 1j * m * e_mode, "mixed q-field"),
    ]
    rng = np.random.default_rng(seed)
    scale = magnitude / np.sqrt(2 * n + 2 * n_modes)
    for i in range(8):
        fixed.append(TestPoint(
            scale * rng.standard_normal(n),
            scale * rng.standard_normal(n),
            scale * (rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)),
            f"random-{i}",
        ))
    return fixed


# ----------------------------------------------------------------------------
# ħ sweep
# ----------------------------------------------------------------------------

def is_monotone(values: Sequence[float], slack: float = MONOTONE_SLACK, floor: float = MONOTONE_FLOOR) -> bool:
    """Non-increasing within a relative slack and an absolute floor."""
    return all(b <= (1.0 + slack) * a + floor for a, b in zip(values, values[1:], strict=False))


def _check_hbar_list(hbar_list: Sequence[float]) -> None:
    if not hbar_list:
        raise ConfigurationError("the hbar list is empty")
    if any(not 0 < h <= 1 for h in hbar_list):
        raise ConfigurationError(f"hbar values must lie in (0, 1], got {list(hbar_list)}")
    if any(b >= a for a, b in zip(hbar_list, hbar_list[1:], strict=False)):
        raise ConfigurationError(f"hbar values must be strictly decreasing, got {list(hbar_list)}")


def classical_reference(
    u0: ClassicalState,
    t_list: Sequence[float],
    cfg: ModelConfig,
    dt: float,
) -> dict[float, ClassicalState]:
    """Φ_t(u₀) at every requested time."""
    return {float(t): (u0.copy() if t == 0 else integrate(u0, t, dt, cfg).final) for t in t_list}


def _sweep_one(
    hbar: float,
    u0: ClassicalState,
    reference: dict[float, ClassicalState],
    cfg: ModelConfig,
    pgrid: ParticleGrid,
    fbasis: FockBasis,
    panel: Sequence[TestPoint],
    width_cells: float,
    leakage_threshold: float,
    leakage_flag: float,
) -> list[SweepRow]:
    H = assemble_hamiltonian(cfg, pgrid, fbasis, hbar)
    psi0 = coherent_state(u0, hbar, pgrid, fbasis, cfg, width_cells, leakage_threshold)
    sqrt_dk = np.sqrt(cfg.kgrid.weight)
    rows = []
    for t, u_cl in reference.items():
        psi = evolve(psi0, H, t)
        obs = observables(psi, H)
        modes = np.asarray(obs["field_modes"])
        tilde = interaction_picture(psi, H, t)
        tilde_modes = np.asarray(observables(tilde, H)["field_modes"])
        u_tilde = ClassicalState(u_cl.p, u_cl.q, np.exp(1j * t * cfg.omega) * u_cl.alpha)

        char = max(
            (abs(characteristic_quantum(psi, xi, H, leakage_threshold) - characteristic_classical(xi, u_cl, cfg.kgrid))
             for xi in panel),
            default=0.0,
        )
        leakage = obs["top_shell_weight"]
        if leakage > leakage_flag:
            logger.warning(f"hbar={hbar:g}, t={t:g}: top-shell weight {leakage:.2e} above {leakage_flag:g}")
        rows.append(SweepRow(
            hbar=hbar,
            t=t,
            q_error=float(np.max(np.abs(np.asarray(obs["q_mean"]) - u_cl.q))),
            p_error=float(np.max(np.abs(np.asarray(obs["p_mean"]) - u_cl.p))),
            field_errors=[float(e) for e in np.abs(modes - sqrt_dk * u_cl.alpha)],
            interaction_field_error=float(np.max(np.abs(tilde_modes - sqrt_dk * u_tilde.alpha))),
            characteristic_error=float(char),
            leakage=leakage,
            leakage_ok=leakage <= leakage_flag,
        ))
    return rows


def hbar_sweep(
    u0: ClassicalState,
    hbar_list: Sequence[float],
    t_list: Sequence[float],
    cfg: ModelConfig,
    pgrid: ParticleGrid,
    fbasis: FockBasis,
    panel: Sequence[TestPoint] | None = None,
    classical_dt: float = 1e-3,
    width_cells: float = 1.0,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
    leakage_flag: float = LEAKAGE_FLAG,
    max_workers: int = 1,
    seed: int = 0,
    config_hash: str = "",
) -> SweepReport:
    """Coherent-state evolution for each ħ against the classical flow of u₀.

    `cfg` is the model on the quantum mode set. Guard failures at one ħ are
    recorded and the sweep continues with the remaining values.
    """
    _check_hbar_list(hbar_list)
    if any(t < 0 for t in t_list):
        raise ConfigurationError(f"sweep times must be non-negative, got {list(t_list)}")
    if panel is None:
        panel = build_test_panel(cfg.n, cfg.kgrid.size, seed)
    reference = classical_reference(u0, t_list, cfg, classical_dt)

    def job(hbar: float) -> list[SweepRow] | str:
        try:
            return _sweep_one(hbar, u0, reference, cfg, pgrid, fbasis, panel,
                              width_cells, leakage_threshold, leakage_flag)
        except (GuardViolationError, TruncationOverflowError) as e:
            logger.warning(f"hbar={hbar:g} skipped: {e.detail}")
            return e.detail

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        outcomes = list(pool.map(job, hbar_list))

    completed: list[float] = []
    rows: list[SweepRow] = []
    failures: dict[str, str] = {}
    for hbar, outcome in zip(hbar_list, outcomes, strict=True):
        if isinstance(outcome, str):
            failures[f"{hbar:g}"] = outcome
        else:
            completed.append(hbar)
            rows.extend(outcome)

    report = SweepReport(
        hbar_values=completed,
        rows=rows,
        failures=failures,
        config_hash=config_hash,
        seed=seed,
        convention=CHARACTERISTIC_CONVENTION,
    )
    if len(completed) < 2:
        logger.warning("Fewer than two hbar values completed; monotonicity is unassessable")
        return report
    for t in reference:
        for name in SWEEP_COLUMNS:
            ok = is_monotone(report.column(name, t))
            report.monotone[f"{name}@t={t:g}"] = ok
            if not ok:
                logger.warning(f"Column {name} at t={t:g} is not monotone in hbar")
    return report


# ----------------------------------------------------------------------------
# push-forward bookkeeping
# ----------------------------------------------------------------------------

def pushforward_check(
    samples: Sequence[ClassicalState],
    t: float,
    cfg: ModelConfig,
    panel: Sequence[TestPoint],
    dt: float = 1e-2,
    composed_flow: Flow | None = None,
) -> float:
    """max over the panel of |E φ(Φ_t u) − E (φ ∘ Φ_t)(u)|.

    The first mean transports the samples before evaluating; the second
    evaluates a test function already composed with the flow. `composed_flow`
    replaces the flow inside the composed test function (fault injection).
    """
    if not samples:
        raise ConfigurationError("push-forward check needs at least one sample")

    def flow(u: ClassicalState) -> ClassicalState:
        return u.copy() if t == 0 else integrate(u, t, dt, cfg).final

    inner_flow = composed_flow or flow
    transported = [flow(u) for u in samples]

    worst = 0.0
    for xi in panel:
        pushed = np.mean([characteristic_classical(xi, u, cfg.kgrid) for u in transported])

        def composed(u: ClassicalState, xi: TestPoint = xi) -> complex:
            return characteristic_classical(xi, inner_flow(u), cfg.kgrid)

        pulled = np.mean([composed(u) for u in samples])
        worst = max(worst, float(abs(pushed - pulled)))
    if worst > PUSHFORWARD_TOLERANCE:
        logger.warning(f"Push-forward orderings disagree by {worst:.3e}")
    return worst
