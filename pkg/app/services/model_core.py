"""Discretized classical particle-field model: dispersion, norms, interaction, energy."""

import logging
from collections.abc import Mapping

import numpy as np
from numpy.typing import NDArray

from app.core.exceptions import ConfigurationError, NumericalConsistencyError
from app.models import (
    AssumptionReport,
    ClassicalState,
    Dispersion,
    FormFactor,
    FormFactorPreset,
    KGrid,
    ModelConfig,
    NormCheck,
    Potential,
)
from app.models.model import RealFn

logger = logging.getLogger(__name__)

IMAG_TOLERANCE = 1e-12
GRID_DEPENDENCE_RTOL = 1e-3

DEFAULT_CEILINGS: dict[str, float] = {
    "omega^(3/2-sigma) chi": 1e6,
    "omega^(1/2) chi": 1e6,
    "omega^(-1/2) chi": 1e6,
    "sup V": 1e3,
    "sup grad V": 1e3,
    "sup hess V": 1e3,
}


def omega_eval(k: float | NDArray[np.float64], m_f: float) -> NDArray[np.float64]:
    return Dispersion(m_f).evaluate(k)


def real_part(value: complex | NDArray[np.complex128], what: str = "quantity") -> NDArray[np.float64]:
    """Drop an imaginary residue below tolerance; larger residues are an error."""
    arr = np.asarray(value)
    if not np.iscomplexobj(arr):
        return arr.astype(float)
    scale = np.maximum(1.0, np.abs(arr.real))
    residue = np.abs(arr.imag)
    if np.any(residue > IMAG_TOLERANCE * scale):
        raise NumericalConsistencyError(
            f"{what} has imaginary residue {float(np.max(residue)):.3e}")
    return arr.real.copy()


# ----------------------------------------------------------------------------
# norms and inner products
# ----------------------------------------------------------------------------

def inner(f: NDArray[np.complex128], g: NDArray[np.complex128], kgrid: KGrid) -> complex:
    """Δk-weighted ⟨f, g⟩, antilinear in the first slot."""
    return complex(kgrid.weight * np.vdot(f, g))


def weighted_norm(values: NDArray[np.complex128], cfg: ModelConfig, power: float) -> float:
    """‖ω^power · values‖ in the discrete L²(dk)."""
    w = cfg.omega ** (2.0 * power)
    return float(np.sqrt(cfg.kgrid.weight * np.sum(w * np.abs(values) ** 2)))


def field_norm(alpha: NDArray[np.complex128], cfg: ModelConfig, sigma: float | None = None) -> float:
    cfg.kgrid.check_field(alpha)
    return weighted_norm(alpha, cfg, cfg.sigma if sigma is None else sigma)


def xsigma_norm(u: ClassicalState, sigma: float, cfg: ModelConfig) -> float:
    if sigma < 0:
        raise ConfigurationError(f"sigma must be non-negative, got {sigma}")
    cfg.kgrid.check_field(u.alpha)
    particles = float(np.sum(u.q**2) + np.sum(u.p**2))
    return float(np.sqrt(particles + weighted_norm(u.alpha, cfg, sigma) ** 2))


def chi_norm(cfg: ModelConfig, power: float) -> float:
    return weighted_norm(cfg.form_factor.values, cfg, power)


# ----------------------------------------------------------------------------
# interaction functionals
# ----------------------------------------------------------------------------

def _phases(q: NDArray[np.float64], kgrid: KGrid) -> NDArray[np.complex128]:
    """e^{2πi k q_j}, shape (n, K)."""
    return np.exp(2j * np.pi * np.outer(q, kgrid.points))


def _check_index(j: int, n: int) -> None:
    if not 0 <= j < n:
        raise ConfigurationError(f"particle index {j} outside 0..{n - 1}")


def interaction_all(q: NDArray[np.float64], alpha: NDArray[np.complex128], cfg: ModelConfig) -> NDArray[np.float64]:
    """I_j(q, α) for every particle."""
    cfg.kgrid.check_field(alpha)
    terms = cfg.coupling * alpha * _phases(np.asarray(q, dtype=float), cfg.kgrid)
    return real_part(cfg.kgrid.weight * np.sum(terms + np.conj(terms), axis=1), "interaction I")


def grad_interaction_all(q: NDArray[np.float64], alpha: NDArray[np.complex128], cfg: ModelConfig) -> NDArray[np.float64]:
    """∇_{q_j} I_j(q, α) for every particle (d=1)."""
    cfg.kgrid.check_field(alpha)
    terms = cfg.coupling * alpha * _phases(np.asarray(q, dtype=float), cfg.kgrid)
    kfac = 2j * np.pi * cfg.kgrid.points
    return real_part(cfg.kgrid.weight * np.sum(kfac * (terms - np.conj(terms)), axis=1), "grad I")


def interaction_I(q: NDArray[np.float64], alpha: NDArray[np.complex128], j: int, cfg: ModelConfig) -> float:
    _check_index(j, cfg.n)
    return float(interaction_all(q, alpha, cfg)[j])


def grad_I(q: NDArray[np.float64], alpha: NDArray[np.complex128], j: int, cfg: ModelConfig) -> float:
    _check_index(j, cfg.n)
    return float(grad_interaction_all(q, alpha, cfg)[j])


def gradient_bound(alpha: NDArray[np.complex128], cfg: ModelConfig) -> float:
    """Upper bound 4π‖ω^{1/2}χ‖‖α‖ on |∇I_j|."""
    return 4.0 * np.pi * chi_norm(cfg, 0.5) * field_norm(alpha, cfg, 0.0)


def gradient_lipschitz_bound(
    q1: NDArray[np.float64],
    alpha1: NDArray[np.complex128],
    q2: NDArray[np.float64],
    alpha2: NDArray[np.complex128],
    j: int,
    cfg: ModelConfig,
) -> float:
    a = chi_norm(cfg, 0.5)
    b = chi_norm(cfg, 1.5 - cfg.sigma)
    return float(
        4.0 * np.pi * a * field_norm(alpha1 - alpha2, cfg, 0.0)
        + 8.0 * np.sqrt(2.0) * np.pi**2 * b * abs(q1[j] - q2[j]) * field_norm(alpha2, cfg)
    )


# ----------------------------------------------------------------------------
# Hamiltonian
# ----------------------------------------------------------------------------

def hamiltonian_classical(u: ClassicalState, cfg: ModelConfig) -> float:
    cfg.kgrid.check_field(u.alpha)
    kinetic = float(np.sum(cfg.kinetic(u.p)))
    field = float(cfg.kgrid.weight * np.sum(cfg.omega * np.abs(u.alpha) ** 2))
    coupling = float(np.sum(interaction_all(u.q, u.alpha, cfg)))
    return kinetic + float(cfg.potential.value(u.q)) + field + coupling


# ----------------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------------

def make_form_factor(
    preset: FormFactorPreset | str,
    kgrid: KGrid,
    dispersion: Dispersion,
    amplitude: float = 1.0,
    cutoff: float = 2.0,
    power: float = 0.0,
) -> FormFactor:
    """Sample a form-factor preset on `kgrid`.

    gaussian: χ₀ e^{-k²/Λ²}; compact: χ₀ exp(1 - 1/(1-(k/Λ)²)) on |k| < Λ;
    custom: χ₀ ω(k)^power (a power-law tail, used to exercise divergence detection).
    """
    tag = FormFactorPreset(preset)
    if cutoff <= 0:
        raise ConfigurationError(f"form factor cutoff must be positive, got {cutoff}")

    if tag is FormFactorPreset.GAUSSIAN:
        def profile(k: NDArray[np.float64]) -> NDArray[np.float64]:
            return amplitude * np.exp(-np.square(k) / cutoff**2)
    elif tag is FormFactorPreset.COMPACT:
        def profile(k: NDArray[np.float64]) -> NDArray[np.float64]:
            s = np.square(np.asarray(k, dtype=float) / cutoff)
            out = np.zeros_like(s)
            inside = s < 1.0
            out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - s[inside]))
            return out
    else:
        def profile(k: NDArray[np.float64]) -> NDArray[np.float64]:
            return amplitude * dispersion.evaluate(k) ** power

    return FormFactor(values=profile(kgrid.points), preset=tag, profile=profile)


def _separable_potential(
    name: str,
    v: RealFn,
    dv: RealFn,
    d2v: RealFn,
    sup_v: float,
    sup_dv: float,
    sup_d2v: float,
    n: int,
) -> Potential:
    def value(q: NDArray[np.float64]) -> float:
        return float(np.sum(v(np.asarray(q, dtype=float))))

    def gradient(q: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.asarray(dv(np.asarray(q, dtype=float)), dtype=float)

    def hessian(q: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.diag(np.asarray(d2v(np.asarray(q, dtype=float)), dtype=float))

    return Potential(
        name=name,
        value=value,
        gradient=gradient,
        hessian=hessian,
        sup_norm=n * sup_v,
        gradient_bound=np.sqrt(n) * sup_dv,
        hessian_bound=sup_d2v,
        pointwise=v,
    )


def gaussian_well(depth: float, width: float, n: int) -> Potential:
    """V(q) = -V₀ Σ_j e^{-q_j²/w²}."""
    if width <= 0:
        raise ConfigurationError(f"potential width must be positive, got {width}")
    w2 = width**2

    def v(x):
        return -depth * np.exp(-np.square(x) / w2)

    def dv(x):
        return 2.0 * depth * x / w2 * np.exp(-np.square(x) / w2)

    def d2v(x):
        return 2.0 * depth / w2 * (1.0 - 2.0 * np.square(x) / w2) * np.exp(-np.square(x) / w2)

    d = abs(depth)
    return _separable_potential(
        "gaussian_well", v, dv, d2v,
        sup_v=d,
        sup_dv=np.sqrt(2.0) * d * np.exp(-0.5) / width,
        sup_d2v=2.0 * d / w2,
        n=n,
    )


def zero_potential(n: int) -> Potential:
    def zero(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return _separable_potential("zero", zero, zero, zero, 0.0, 0.0, 0.0, n)


def harmonic_potential(stiffness: float, n: int) -> Potential:
    """V(q) = ½κ Σ q_j²; unbounded, so it fails the bounded-potential assumption."""

    def v(x):
        return 0.5 * stiffness * np.square(x)

    def dv(x):
        return stiffness * np.asarray(x, dtype=float)

    def d2v(x):
        return stiffness * np.ones_like(np.asarray(x, dtype=float))

    return _separable_potential("harmonic", v, dv, d2v, np.inf, np.inf, abs(stiffness), n)


def make_potential(preset: str, n: int, depth: float = 1.0, width: float = 1.0, stiffness: float = 1.0) -> Potential:
    if preset == "gaussian_well":
        return gaussian_well(depth, width, n)
    if preset == "zero":
        return zero_potential(n)
    if preset == "harmonic":
        return harmonic_potential(stiffness, n)
    raise ConfigurationError(f"unknown potential preset '{preset}'")


# ----------------------------------------------------------------------------
# assumptions
# ----------------------------------------------------------------------------

def _doubled_extent(cfg: ModelConfig) -> ModelConfig | None:
    if cfg.form_factor.profile is None or cfg.kgrid.size < 2:
        return None
    wider = KGrid.symmetric(2.0 * float(cfg.kgrid.points[-1]), 2 * cfg.kgrid.size - 1)
    return cfg.with_kgrid(wider, cfg.form_factor.resample(wider))


def check_assumptions(cfg: ModelConfig, ceilings: Mapping[str, float] | None = None) -> AssumptionReport:
    """Evaluate the form-factor and potential norms against configured ceilings."""
    limits = {**DEFAULT_CEILINGS, **(ceilings or {})}
    wider = _doubled_extent(cfg)
    powers = {
        "omega^(3/2-sigma) chi": 1.5 - cfg.sigma,
        "omega^(1/2) chi": 0.5,
        "omega^(-1/2) chi": -0.5,
    }

    checks: list[NormCheck] = []
    flags: list[str] = []
    for name, power in powers.items():
        value = chi_norm(cfg, power)
        dependent = False
        if wider is not None:
            refined = chi_norm(wider, power)
            dependent = abs(refined - value) > GRID_DEPENDENCE_RTOL * max(value, 1e-300)
        if dependent:
            flags.append(f"grid-truncation-dependent: {name}")
        checks.append(NormCheck(
            name=name,
            value=value,
            ceiling=limits[name],
            passed=bool(np.isfinite(value) and value <= limits[name]),
            grid_dependent=dependent,
        ))

    pot = cfg.potential
    for name, value in (
        ("sup V", pot.sup_norm),
        ("sup grad V", pot.gradient_bound),
        ("sup hess V", pot.hessian_bound),
    ):
        checks.append(NormCheck(
            name=name,
            value=float(value),
            ceiling=limits[name],
            passed=bool(np.isfinite(value) and value <= limits[name]),
        ))

    report = AssumptionReport(checks=checks, passed=all(c.passed for c in checks), flags=flags)
    for check in checks:
        if not check.passed:
            logger.warning(f"Assumption check failed: {check.name}={check.value:.4g} > {check.ceiling:.4g}")
    for flag in flags:
        logger.warning(flag)
    return report
