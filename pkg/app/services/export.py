"""CSV, JSON and replay writers; every file carries the config hash in its header."""

import csv
import logging
import threading
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from app.core.exceptions import ConfigurationError
from app.models import EstimateCase, GronwallReport, ModelConfig, ObservableRecord, ResidualRecord, SweepReport, Trajectory
from app.services.model_core import hamiltonian_classical

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".12e"

_locks: dict[Path, threading.Lock] = {}
_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    with _locks_guard:
        return _locks.setdefault(path.resolve(), threading.Lock())


def format_value(value: Any) -> str:
    if isinstance(value, bool | np.bool_):
        return "true" if value else "false"
    if isinstance(value, int | np.integer):
        return str(int(value))
    if isinstance(value, float | np.floating):
        return format(float(value), FLOAT_FORMAT)
    if value is None:
        return ""
    return str(value)


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    metadata: Mapping[str, Any],
) -> Path:
    """Comma-separated table preceded by '#'-prefixed `key=value` metadata lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path), path.open("w", newline="", encoding="utf-8") as fh:
        for key, value in metadata.items():
            fh.write(f"# {key}={format_value(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.info(f"Wrote {path}")
    return path


def read_csv(path: Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Metadata and rows of a file written by `write_csv`."""
    metadata: dict[str, str] = {}
    body: list[str] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
            else:
                body.append(line)
    return metadata, list(csv.DictReader(body))


def write_json(path: Path, model: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path):
        path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


# ============================================================================
# TABLES
# ============================================================================

def trajectory_rows(traj: Trajectory, cfg: ModelConfig) -> tuple[list[str], list[list[Any]]]:
    n, modes = cfg.n, cfg.kgrid.size
    header = ["t"] + [f"p{j}" for j in range(n)] + [f"q{j}" for j in range(n)]
    header += [f"re_alpha{i}" for i in range(modes)] + [f"im_alpha{i}" for i in range(modes)] + ["H"]
    rows = [
        [t, *u.p, *u.q, *u.alpha.real, *u.alpha.imag, hamiltonian_classical(u, cfg)]
        for t, u in zip(traj.times, traj.states, strict=True)
    ]
    return header, rows


def write_trajectory(path: Path, traj: Trajectory, cfg: ModelConfig, metadata: Mapping[str, Any]) -> Path:
    header, rows = trajectory_rows(traj, cfg)
    return write_csv(path, header, rows, {**metadata, "picture": traj.picture})


def write_gronwall(path: Path, report: GronwallReport, metadata: Mapping[str, Any]) -> Path:
    meta = {**metadata, "constant": report.constant, "fitted_rate": report.fitted_rate,
            "violations": report.violations}
    return write_csv(path, ["t", "gap", "envelope"], ([r.t, r.gap, r.envelope] for r in report.rows), meta)


def write_observables(
    path: Path,
    times: Sequence[float],
    hbar: float,
    records: Sequence[ObservableRecord],
    metadata: Mapping[str, Any],
) -> Path:
    """t, ħ, ⟨q̂⟩, ⟨p̂⟩, Re/Im ⟨â_i⟩, ⟨N̂_ħ⟩, ⟨Ĥ⟩ and leakage per saved time."""
    if len(times) != len(records):
        raise ConfigurationError("one observable record per time is required")
    if not records:
        return write_csv(path, ["t", "hbar"], [], metadata)
    n = len(records[0]["q_mean"])
    modes = len(records[0]["field_modes"])
    header = ["t", "hbar"] + [f"q{j}" for j in range(n)] + [f"p{j}" for j in range(n)]
    header += [f"re_a{i}" for i in range(modes)] + [f"im_a{i}" for i in range(modes)]
    header += ["number", "energy", "leakage"]
    rows = []
    for t, rec in zip(times, records, strict=True):
        field_modes = np.asarray(rec["field_modes"])
        rows.append([t, hbar, *rec["q_mean"], *rec["p_mean"], *field_modes.real, *field_modes.imag,
                     rec["number"], rec["energy"], rec["top_shell_weight"]])
    return write_csv(path, header, rows, metadata)


def write_sweep(path: Path, report: SweepReport) -> Path:
    modes = max((len(r.field_errors) for r in report.rows), default=0)
    header = ["hbar", "t", "q_error", "p_error"] + [f"field_error{i}" for i in range(modes)]
    header += ["interaction_field_error", "characteristic_error", "leakage", "leakage_ok"]
    rows = [
        [r.hbar, r.t, r.q_error, r.p_error, *r.field_errors, r.interaction_field_error,
         r.characteristic_error, r.leakage, r.leakage_ok]
        for r in report.rows
    ]
    meta = {"config_hash": report.config_hash, "seed": report.seed, "convention": report.convention}
    for hbar, message in report.failures.items():
        meta[f"failed hbar {hbar}"] = message
    return write_csv(path, header, rows, meta)


def write_residuals(path: Path, records: Sequence[ResidualRecord], metadata: Mapping[str, Any]) -> Path:
    header = ["label", "quadrature_dt", "residual", "standard_error", "samples"]
    rows = ([r["label"], r["quadrature_dt"], r["residual"], r["standard_error"], r["samples"]] for r in records)
    return write_csv(path, header, rows, metadata)


def write_certificate(path: Path, cases: Sequence[EstimateCase], metadata: Mapping[str, Any]) -> Path:
    header = ["name", "lemma", "hbar", "samples", "tolerance", "worst_ratio", "passed", "fitted", "recipe"]
    rows = (
        [c.name, c.lemma, c.hbar, c.samples, c.tolerance, c.worst_ratio, c.passed, c.fitted, c.recipe]
        for c in cases
    )
    return write_csv(path, header, rows, metadata)


# ============================================================================
# REPLAY FILES
# ============================================================================

def write_replay(path: Path, case: EstimateCase, metadata: Mapping[str, Any]) -> Path:
    """Plain-text replay of a violating sample.

    '#'-prefixed `key=value` header lines, then one `index:value` line per
    coefficient of the offending vector, complex values as `re,im`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    violation = dict(case.violation or {})
    vector = violation.pop("vector", [])
    header = {**metadata, "case": case.name, "lemma": case.lemma, "hbar": case.hbar,
              "worst_ratio": case.worst_ratio, **violation}
    with _lock_for(path), path.open("w", encoding="utf-8") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={format_value(value)}\n")
        for index, (re, im) in enumerate(vector):
            fh.write(f"{index}:{format(float(re), '.17e')},{format(float(im), '.17e')}\n")
    logger.info(f"Wrote replay file {path}")
    return path


def read_replay(path: Path) -> tuple[dict[str, str], np.ndarray]:
    metadata: dict[str, str] = {}
    values: dict[int, complex] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
                continue
            index, _, value = line.partition(":")
            re, _, im = value.partition(",")
            values[int(index)] = complex(float(re), float(im))
    vector = np.array([values[i] for i in range(len(values))], dtype=complex)
    return metadata, vector
