"""Particle-field equation: right-hand sides, free flow, RK4 integration, diagnostics."""

import logging
from collections.abc import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import simpson, trapezoid

from app.core.exceptions import ConfigurationError, IntegrationBlowupError, ShapeError
from app.models import ClassicalState, GronwallReport, GronwallRow, ModelConfig, Trajectory
from app.models.state import Picture
from app.services.model_core import (
    chi_norm,
    field_norm,
    grad_interaction_all,
    hamiltonian_classical,
    xsigma_norm,
)

logger = logging.getLogger(__name__)

BLOWUP_NORM = 1e12

Step = Callable[[float, ClassicalState, float, ModelConfig], ClassicalState]


def nonlinearity_N(u: ClassicalState, cfg: ModelConfig) -> ClassicalState:
    cfg.kgrid.check_field(u.alpha)
    dp = -np.asarray(cfg.potential.gradient(u.q), dtype=float) - grad_interaction_all(u.q, u.alpha, cfg)
    dq = cfg.kinetic_gradient(u.p)
    source = np.exp(-2j * np.pi * np.outer(u.q, cfg.kgrid.points))
    dalpha = -1j * cfg.coupling * np.sum(source, axis=0)
    return ClassicalState(dp, dq, dalpha)


def linear_part(u: ClassicalState, cfg: ModelConfig) -> ClassicalState:
    return ClassicalState(np.zeros_like(u.p), np.zeros_like(u.q), -1j * cfg.omega * u.alpha)


def pfe_rhs(u: ClassicalState, cfg: ModelConfig) -> ClassicalState:
    return linear_part(u, cfg) + nonlinearity_N(u, cfg)


def free_flow(t: float, u: ClassicalState, cfg: ModelConfig) -> ClassicalState:
    """Φ^f_t(p, q, α) = (p, q, e^{-itω}α)."""
    cfg.kgrid.check_field(u.alpha)
    return ClassicalState(u.p.copy(), u.q.copy(), np.exp(-1j * t * cfg.omega) * u.alpha)


def vector_field_v(t: float, u: ClassicalState, cfg: ModelConfig) -> ClassicalState:
    """v(t, u) = Φ^f_{-t} ∘ 𝒩 ∘ Φ^f_t (u)."""
    return free_flow(-t, nonlinearity_N(free_flow(t, u, cfg), cfg), cfg)


def vector_field_v_explicit(t: float, u: ClassicalState, cfg: ModelConfig) -> ClassicalState:
    rotated = np.exp(-1j * t * cfg.omega) * u.alpha
    dp = -np.asarray(cfg.potential.gradient(u.q), dtype=float) - grad_interaction_all(u.q, rotated, cfg)
    dq = cfg.kinetic_gradient(u.p)
    phase = np.exp(-2j * np.pi * np.outer(u.q, cfg.kgrid.points) + 1j * t * cfg.omega)
    dalpha = -1j * cfg.coupling * np.sum(phase, axis=0)
    return ClassicalState(dp, dq, dalpha)


# ----------------------------------------------------------------------------
# integrators
# ----------------------------------------------------------------------------

def _lawson_rk4_step(t: float, u: ClassicalState, h: float, cfg: ModelConfig) -> ClassicalState:  # noqa: ARG001
    """RK4 on the nonlinearity with the linear rotation e^{-iωh} applied exactly."""
    def half(w: ClassicalState) -> ClassicalState:
        return free_flow(0.5 * h, w, cfg)

    def full(w: ClassicalState) -> ClassicalState:
        return free_flow(h, w, cfg)

    k1 = nonlinearity_N(u, cfg)
    k2 = nonlinearity_N(half(u + (0.5 * h) * k1), cfg)
    k3 = nonlinearity_N(half(u) + (0.5 * h) * k2, cfg)
    k4 = nonlinearity_N(full(u) + h * half(k3), cfg)
    return full(u) + (h / 6.0) * (full(k1) + 2.0 * half(k2 + k3) + k4)


def _interaction_rk4_step(t: float, u: ClassicalState, h: float, cfg: ModelConfig) -> ClassicalState:
    k1 = vector_field_v(t, u, cfg)
    k2 = vector_field_v(t + 0.5 * h, u + (0.5 * h) * k1, cfg)
    k3 = vector_field_v(t + 0.5 * h, u + (0.5 * h) * k2, cfg)
    k4 = vector_field_v(t + h, u + h * k3, cfg)
    return u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS: dict[str, Step] = {
    "direct": _lawson_rk4_step,
    "interaction": _interaction_rk4_step,
}


def integrate(
    u0: ClassicalState,
    T: float,
    dt: float,
    cfg: ModelConfig,
    picture: Picture = "direct",
    save_stride: int = 1,
) -> Trajectory:
    """Integrate the particle-field equation on [0, T].

    States are saved every `save_stride` steps and at T, so the last saved
    interval is shorter when the stride does not divide the step count.
    Both pictures return direct-picture states; in the interaction picture the
    stepped variable is ũ = Φ^f_{-t}u and each saved state is mapped back
    with Φ^f_t.
    """
    if dt <= 0 or T < 0:
        raise ConfigurationError(f"need dt > 0 and T >= 0, got dt={dt}, T={T}")
    if save_stride < 1:
        raise ConfigurationError(f"save_stride must be >= 1, got {save_stride}")
    if picture not in _STEPPERS:
        raise ConfigurationError(f"unknown picture '{picture}'")
    cfg.kgrid.check_field(u0.alpha)
    if u0.p.shape != (cfg.n,):
        raise ShapeError(f"state has {u0.p.size} particles, model has {cfg.n}")

    n_steps = int(round(T / dt))
    h = T / n_steps if n_steps else dt
    step = _STEPPERS[picture]
    logger.debug(f"Integrating {n_steps} steps of dt={h:.3g} in the {picture} picture")

    current = u0.copy()
    times = [0.0]
    states = [u0.copy()]
    for i in range(n_steps):
        t = i * h
        try:
            nxt = step(t, current, h, cfg)
        except FloatingPointError as e:
            raise IntegrationBlowupError("floating point failure", last_good_time=t) from e
        if not nxt.is_finite() or xsigma_norm(nxt, 0.0, cfg) > BLOWUP_NORM:
            logger.error(f"Integration blew up after t={t:.6g}")
            raise IntegrationBlowupError("state is NaN or beyond the blowup norm", last_good_time=t)
        current = nxt
        if (i + 1) % save_stride == 0 or i + 1 == n_steps:
            t_next = (i + 1) * h
            times.append(t_next)
            states.append(current if picture == "direct" else free_flow(t_next, current, cfg))
    return Trajectory(times=np.asarray(times), states=states, picture=picture)


def interaction_states(traj: Trajectory, cfg: ModelConfig) -> list[ClassicalState]:
    """ũ(t) = Φ^f_{-t} u(t) for every saved state."""
    return [free_flow(-t, u, cfg) for t, u in zip(traj.times, traj.states, strict=True)]


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------

def energy_drift(traj: Trajectory, cfg: ModelConfig) -> float:
    if len(traj) <= 1:
        return 0.0
    energies = np.array([hamiltonian_classical(u, cfg) for u in traj.states])
    return float(np.max(np.abs(energies - energies[0])) / max(1.0, abs(energies[0])))


def _stack(states: list[ClassicalState]) -> NDArray[np.complex128]:
    return np.stack([np.concatenate([u.p, u.q, u.alpha]) for u in states])


def _unstack(row: NDArray[np.complex128], n: int) -> ClassicalState:
    return ClassicalState(row[:n].real, row[n:2 * n].real, row[2 * n:])


def duhamel_residual(traj: Trajectory, cfg: ModelConfig, rule: str = "simpson") -> float:
    """‖u(T) − Φ^f_T u₀ − ∫₀^T Φ^f_{T−s} 𝒩(u(s)) ds‖_{X⁰} with quadrature on the saved times."""
    if len(traj) <= 1:
        return 0.0
    T = float(traj.times[-1])
    integrand = _stack([free_flow(T - s, nonlinearity_N(u, cfg), cfg) for s, u in zip(traj.times, traj.states, strict=True)])
    if rule == "simpson":
        integral = simpson(integrand, x=traj.times, axis=0)
    elif rule == "trapezoid":
        integral = trapezoid(integrand, x=traj.times, axis=0)
    else:
        raise ConfigurationError(f"unknown quadrature rule '{rule}'")
    expected = free_flow(T, traj.states[0], cfg) + _unstack(integral, cfg.n)
    return xsigma_norm(traj.final - expected, 0.0, cfg)


def integrability_constant(cfg: ModelConfig) -> float:
    """C with ‖v(t,u)‖_{X^σ} ≤ C(‖u‖²_{X⁰} + 1)."""
    n = cfg.n
    q_bound = np.sqrt(n) if cfg.relativistic else 1.0 / float(np.min(cfg.mass_array))
    return float(
        cfg.potential.gradient_bound
        + 4.0 * np.pi * np.sqrt(n) * chi_norm(cfg, 0.5)
        + q_bound
        + n * chi_norm(cfg, cfg.sigma - 0.5)
    )


def nonlinearity_bound(cfg: ModelConfig, radius: float) -> float:
    """c₁ with ‖𝒩(u)‖_{X^σ} ≤ c₁ whenever ‖u‖_{X⁰} ≤ radius."""
    n = cfg.n
    q_bound = np.sqrt(n) if cfg.relativistic else radius / float(np.min(cfg.mass_array))
    return float(
        cfg.potential.gradient_bound
        + 4.0 * np.pi * np.sqrt(n) * chi_norm(cfg, 0.5) * radius
        + q_bound
        + n * chi_norm(cfg, cfg.sigma - 0.5)
    )


def trajectory_nonlinearity_ratio(traj: Trajectory, cfg: ModelConfig) -> float:
    """max_t ‖𝒩(u(t))‖_{X^σ} / c₁ along a trajectory; at most 1."""
    radius = max(xsigma_norm(u, 0.0, cfg) for u in traj.states)
    c1 = nonlinearity_bound(cfg, radius)
    worst = max(xsigma_norm(nonlinearity_N(u, cfg), cfg.sigma, cfg) for u in traj.states)
    return worst / c1 if c1 > 0 else 0.0


def gronwall_constant(cfg: ModelConfig, field_sup: float) -> float:
    """Lipschitz constant of 𝒩 in X⁰ along solutions with sup_t ‖α(t)‖_{𝒢^σ} ≤ field_sup."""
    n = cfg.n
    a = chi_norm(cfg, 0.5)
    b = chi_norm(cfg, 1.5 - cfg.sigma)
    c_p = (
        cfg.potential.hessian_bound
        + 4.0 * np.pi * np.sqrt(n) * a
        + 8.0 * np.sqrt(2.0) * np.pi**2 * b * field_sup
    )
    m_min = float(np.min(cfg.mass_array))
    return float(np.sqrt(c_p**2 + 1.0 / m_min**2 + 4.0 * np.pi**2 * n * a**2))


def gronwall_divergence(
    u0a: ClassicalState,
    u0b: ClassicalState,
    T: float,
    dt: float,
    cfg: ModelConfig,
    save_stride: int = 1,
) -> GronwallReport:
    if u0a.alpha.shape != u0b.alpha.shape or u0a.p.shape != u0b.p.shape:
        raise ShapeError("perturbation pair lives on different grids")
    traj_a = integrate(u0a, T, dt, cfg, save_stride=save_stride)
    traj_b = integrate(u0b, T, dt, cfg, save_stride=save_stride)

    field_sup = max(field_norm(u.alpha, cfg) for u in traj_a.states + traj_b.states)
    constant = gronwall_constant(cfg, field_sup)
    gaps = np.array([xsigma_norm(a - b, 0.0, cfg) for a, b in zip(traj_a.states, traj_b.states, strict=True)])
    gap0 = float(gaps[0])
    envelope = np.exp(constant * traj_a.times) * gap0

    rows = [
        GronwallRow(t=float(t), gap=float(g), envelope=float(e))
        for t, g, e in zip(traj_a.times, gaps, envelope, strict=True)
    ]
    violations = int(np.sum(gaps > envelope * (1.0 + 1e-9) + 1e-300))

    positive = gaps > 0
    if np.count_nonzero(positive) >= 2:
        rate = float(np.polyfit(traj_a.times[positive], np.log(gaps[positive]), 1)[0])
    else:
        rate = 0.0

    if violations:
        logger.warning(f"Gronwall envelope violated at {violations} times (C={constant:.4g})")
    return GronwallReport(constant=constant, fitted_rate=rate, initial_gap=gap0, rows=rows, violations=violations)
