"""Subcommand handlers. Each returns an exit status; lab errors propagate to `main`."""

import logging
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from app.cli.schemas import (
    BaseSummary,
    ClassicalSummary,
    CorrespondenceSummary,
    QuantumSummary,
    RunManifest,
    Subcommand,
    VerifySummary,
)
from app.core.config import Settings
from app.core.exceptions import EXIT_OK, GuardViolationError, PropertyViolationError
from app.models import ClassicalState, EnergyReport
from app.services.classical_dynamics import (
    duhamel_residual,
    energy_drift,
    gronwall_divergence,
    integrate,
    trajectory_nonlinearity_ratio,
)
from app.services.correspondence import (
    build_test_panel,
    characteristic_residual,
    hbar_sweep,
    pushforward_check,
    sample_cloud,
)
from app.services.estimates import ensure_passed, run_classical_suite, run_suite
from app.services.export import (
    write_certificate,
    write_gronwall,
    write_json,
    write_observables,
    write_residuals,
    write_sweep,
    write_trajectory,
)
from app.services.model_core import check_assumptions, hamiltonian_classical
from app.services.nelson import assemble_hamiltonian, coherent_state, evolve, expectation, observables

logger = logging.getLogger(__name__)

PUSHFORWARD_SAMPLES = 32
RESIDUAL_TEST_POINT = "mixed p-field"


def _start(subcommand: Subcommand, settings: Settings, out: Path, config_path: str | None) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        subcommand=subcommand,
        config_path=config_path,
        out=str(out),
        seed=settings.run.seed,
        timestamp=datetime.now(timezone.utc),
        config_hash=settings.config_hash(),
    )
    write_json(out / "manifest.json", manifest)
    logger.info(f"Running {subcommand} (config hash {manifest.config_hash}, seed {manifest.seed}) into {out}")
    return manifest


def _finish(out: Path, summary: BaseSummary) -> int:
    write_json(out / "summary.json", summary)
    return EXIT_OK


# ============================================================================
# CLASSICAL
# ============================================================================

def cmd_classical(settings: Settings, out: Path, config_path: str | None = None) -> int:
    """Trajectory, energy drift, Duhamel residual and a Gronwall perturbation pair."""
    manifest = _start("classical", settings, out, config_path)
    header = manifest.header()
    cfg = settings.build_model_config()
    u0 = settings.initial_state(cfg)
    c = settings.classical

    traj = integrate(u0, c.horizon, c.dt, cfg, picture=c.picture, save_stride=c.save_stride)
    drift = energy_drift(traj, cfg)
    energy = EnergyReport(dt=c.dt, horizon=c.horizon, drift=drift, initial_energy=hamiltonian_classical(u0, cfg))
    if drift > 1e-6:
        logger.warning(f"Relative energy drift {drift:.3e} exceeds 1e-6; reduce dt")

    kick = ClassicalState(
        c.perturbation * np.ones(cfg.n),
        c.perturbation * np.ones(cfg.n),
        np.zeros(cfg.kgrid.size, dtype=complex),
    )
    gronwall = gronwall_divergence(u0, u0 + kick, c.gronwall_horizon, c.dt, cfg, save_stride=c.save_stride)

    files = [
        write_trajectory(out / "trajectory.csv", traj, cfg, header),
        write_json(out / "energy.json", energy),
        write_gronwall(out / "gronwall.csv", gronwall, header),
    ]
    summary = ClassicalSummary(
        success=gronwall.violations == 0,
        files=[str(f) for f in files],
        picture=c.picture,
        steps=int(round(c.horizon / c.dt)),
        energy_drift=drift,
        duhamel_residual=duhamel_residual(traj, cfg),
        gronwall_violations=gronwall.violations,
        nonlinearity_ratio=trajectory_nonlinearity_ratio(traj, cfg),
    )
    return _finish(out, summary)


# ============================================================================
# QUANTUM
# ============================================================================

def cmd_quantum(settings: Settings, out: Path, config_path: str | None = None) -> int:
    """Coherent-state evolution at one ħ with an observable time series."""
    manifest = _start("quantum", settings, out, config_path)
    cfg = settings.build_quantum_config()
    pgrid = settings.build_particle_grid()
    fbasis = settings.build_fock_basis()
    q = settings.quantum

    H = assemble_hamiltonian(cfg, pgrid, fbasis, q.hbar, dense_threshold=q.dense_threshold)
    psi0 = coherent_state(settings.initial_state(cfg), q.hbar, pgrid, fbasis, cfg, q.width_cells,
                          q.leakage_threshold)
    times = np.linspace(0.0, q.horizon, q.n_times)
    records, norms = [], []
    for t in times:
        psi = evolve(psi0, H, float(t))
        norms.append(psi.norm())
        records.append(observables(psi, H))

    energy0 = expectation(H.total, psi0).real
    energies = np.array([r["energy"] for r in records])
    files = [write_observables(out / "observables.csv", list(times), q.hbar, records,
                               {**manifest.header(), "hbar": q.hbar})]
    summary = QuantumSummary(
        success=True,
        files=[str(f) for f in files],
        hbar=q.hbar,
        dimension=H.dimension,
        norm_drift=float(np.max(np.abs(np.array(norms) - 1.0))),
        energy_drift=float(np.max(np.abs(energies - energy0))),
        max_leakage=float(max(r["top_shell_weight"] for r in records)),
    )
    return _finish(out, summary)


# ============================================================================
# CORRESPONDENCE
# ============================================================================

def _observed_order(steps: list[float], residuals: list[float]) -> float | None:
    pairs = [(h, r) for h, r in zip(steps, residuals, strict=True) if r > 0]
    if len(pairs) < 2:
        return None
    h, r = np.array(pairs).T
    return float(np.polyfit(np.log(h), np.log(r), 1)[0])


def cmd_correspondence(settings: Settings, out: Path, config_path: str | None = None) -> int:
    """ħ sweep, characteristic-equation residuals and the push-forward check.

    Succeeds when at least two ħ values complete, or when the single configured
    value completes.
    """
    manifest = _start("correspondence", settings, out, config_path)
    header = manifest.header()
    seed = settings.run.seed
    workers = settings.run.max_workers
    sw = settings.sweep
    q = settings.quantum
    cfg = settings.build_quantum_config()
    u0 = settings.initial_state(cfg)
    panel = build_test_panel(cfg.n, cfg.kgrid.size, seed, magnitude=sw.panel_magnitude)

    report = hbar_sweep(
        u0, sw.hbar_values, sw.times, cfg, settings.build_particle_grid(), settings.build_fock_basis(),
        panel=panel, classical_dt=sw.classical_dt, width_cells=q.width_cells,
        leakage_threshold=q.leakage_threshold, max_workers=workers, seed=seed,
        config_hash=manifest.config_hash,
    )
    files = [write_sweep(out / "sweep.csv", report), write_json(out / "sweep.json", report)]

    if not report.hbar_values or (report.failures and len(report.hbar_values) < 2):
        hbar, message = next(iter(report.failures.items()))
        raise GuardViolationError(
            f"only {len(report.hbar_values)} hbar value(s) completed; hbar={hbar} failed: {message}")

    xi = next(p for p in panel if p.label == RESIDUAL_TEST_POINT)
    steps = sorted(sw.residual_steps, reverse=True)
    dirac = [
        characteristic_residual([u0], xi, 0.0, sw.residual_time, dt, cfg, label="dirac")
        for dt in steps
    ]
    cloud = sample_cloud(u0, sw.cloud_samples, np.random.default_rng(seed))
    cloud_record = characteristic_residual(cloud, xi, 0.0, sw.residual_time, steps[-1], cfg,
                                           max_workers=workers, label="cloud")
    files.append(write_residuals(out / "residuals.csv", [*dirac, cloud_record], header))

    gap = pushforward_check(cloud[:PUSHFORWARD_SAMPLES], sw.pushforward_time, cfg, panel)
    summary = CorrespondenceSummary(
        success=all(report.monotone.values()),
        files=[str(f) for f in files],
        completed_hbar=report.hbar_values,
        failed_hbar=report.failures,
        monotone=report.monotone,
        dirac_residuals=[r["residual"] for r in dirac],
        dirac_order=_observed_order(steps, [r["residual"] for r in dirac]),
        cloud_residual=cloud_record["residual"],
        cloud_standard_error=cloud_record["standard_error"],
        pushforward_gap=gap,
    )
    return _finish(out, summary)


# ============================================================================
# VERIFY
# ============================================================================

def cmd_verify(settings: Settings, out: Path, config_path: str | None = None) -> int:
    """Assumption checks, then the classical and quantum estimate suites."""
    manifest = _start("verify", settings, out, config_path)
    header = manifest.header()
    seed = settings.run.seed
    workers = settings.run.max_workers
    v = settings.verify
    q = settings.quantum

    cfg = settings.build_model_config()
    assumptions = check_assumptions(cfg, settings.ceilings())
    files = [write_json(out / "assumptions.json", assumptions)]
    if not assumptions.passed:
        failed = [c.name for c in assumptions.checks if not c.passed]
        raise PropertyViolationError(f"assumption checks failed: {', '.join(failed)}")

    cases = run_classical_suite(cfg, seed, samples=v.samples, pairs=v.pairs, horizon=v.gronwall_horizon,
                                dt=v.gronwall_dt, max_workers=workers)
    cfg_q = settings.build_quantum_config()
    cases += run_suite(
        cfg_q, settings.build_particle_grid(), settings.build_fock_basis(), settings.sweep.hbar_values, seed,
        u0=settings.initial_state(cfg_q), samples=v.samples, state_samples=v.state_samples,
        horizon=v.horizon, n_times=v.n_times, width_cells=q.width_cells,
        leakage_threshold=q.leakage_threshold, max_workers=workers, raise_on_failure=False,
    )
    files.append(write_certificate(out / "certificate.csv", cases, header))

    failed = [c.name if c.hbar is None else f"{c.name}@hbar={c.hbar:g}" for c in cases if not c.passed]
    summary = VerifySummary(
        success=not failed,
        files=[str(f) for f in files],
        assumptions_passed=True,
        cases=len(cases),
        failed=failed,
    )
    try:
        ensure_passed(cases, replay_dir=out, metadata=header)
    except PropertyViolationError as e:
        summary.replay_path = e.replay_path
        summary.error = e.detail
        write_json(out / "summary.json", summary)
        raise
    return _finish(out, summary)
