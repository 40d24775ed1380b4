import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from app.core.config import (
    GridSection,
    ModelSection,
    RunSection,
    Settings,
    SweepSection,
    load_settings,
)
from app.core.exceptions import ConfigurationError
from app.main import COMMANDS, main
from app.services.export import read_csv

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

SMALL_INI = """\
# quick end-to-end runs
[grid]
k_points = 17
particle_points = 32
quantum_modes = 3
n_max = 4

[classical]
horizon = 1.0
dt = 1e-2
save_stride = 10
gronwall_horizon = 0.5

[quantum]
hbar = 0.2
horizon = 0.5
n_times = 3

[sweep]
hbar_values = 0.4, 0.2
times = 0.25
classical_dt = 1e-2
cloud_samples = 8
residual_time = 0.2
residual_steps = 0.1, 0.05
pushforward_time = 0.1

[verify]
samples = 20
state_samples = 5
pairs = 2
horizon = 0.5
n_times = 3
gronwall_horizon = 0.5
gronwall_dt = 1e-2
"""


def _write_config(tmp_path: Path, text: str = SMALL_INI, name: str = "lab.ini") -> str:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _run(tmp_path: Path, subcommand: str, config: str, *extra: str) -> tuple[int, Path]:
    out = tmp_path / subcommand
    status = main([subcommand, "--config", config, "--out", str(out), "--log-level", "WARNING", *extra])
    return status, out


@pytest.mark.unit
class TestLoadSettings:
    """Test reading INI files into Settings"""

    def test_matches_keyword_settings(self, tmp_path, small_settings):
        loaded = load_settings(_write_config(tmp_path))
        assert loaded.sweep.hbar_values == [0.4, 0.2]
        assert loaded.sweep.residual_steps == [0.1, 0.05]
        assert loaded.config_hash() == small_settings.config_hash()

    def test_default_file_matches_builtin_defaults(self):
        assert load_settings(CONFIG_DIR / "default.ini").config_hash() == Settings().config_hash()

    def test_hash_changes_with_values(self, small_settings):
        other = small_settings.model_copy(deep=True)
        other.run.seed = 1
        assert other.config_hash() != small_settings.config_hash()
        assert len(small_settings.config_hash()) == 16

    def test_parse_error_names_line(self, tmp_path):
        path = _write_config(tmp_path, "[grid]\nk_points 17\n")
        with pytest.raises(ConfigurationError) as exc:
            load_settings(path)
        assert f"{path}:2" in exc.value.detail

    def test_validation_error_names_key(self, tmp_path):
        with pytest.raises(ConfigurationError) as exc:
            load_settings(_write_config(tmp_path, "[grid]\nk_points = many\n"))
        assert "[grid] k_points:" in exc.value.detail

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigurationError) as exc:
            load_settings(_write_config(tmp_path, "[grid]\nk_pionts = 17\n"))
        assert "[grid] k_pionts" in exc.value.detail
        assert "Extra inputs" in exc.value.detail

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigurationError) as exc:
            load_settings(_write_config(tmp_path, "[solver]\norder = 4\n"))
        assert "unknown section [solver]" in exc.value.detail

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError) as exc:
            load_settings(tmp_path / "absent.ini")
        assert "not found" in exc.value.detail
        assert exc.value.exit_code == 2


@pytest.mark.unit
class TestValidateSettings:
    """Test the cross-section checks run after field validation"""

    def test_single_entries_are_broadcast(self):
        s = Settings(model=ModelSection(n_particles=2))
        assert s.model.masses == [1.0, 1.0]
        assert s.initial.momenta == [0.5, 0.5]
        assert s.initial.positions == [0.0, 0.0]

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            Settings(model=ModelSection(n_particles=2, masses=[1.0, 2.0, 3.0]))

    def test_only_one_dimension(self):
        with pytest.raises(ConfigurationError):
            Settings(model=ModelSection(dimension=2))

    def test_quantum_modes_parity(self):
        with pytest.raises(ConfigurationError):
            Settings(grid=GridSection(k_points=17, quantum_modes=4))

    def test_hbar_values_sorted(self):
        s = Settings(sweep=SweepSection(hbar_values=[0.1, 0.4, 0.2, 0.4]))
        assert s.sweep.hbar_values == [0.4, 0.2, 0.1]

    @pytest.mark.parametrize("values", [[], [1.5], [0.0, 0.2]])
    def test_hbar_range(self, values):
        with pytest.raises(ValidationError):
            SweepSection(hbar_values=values)

    def test_workers_at_least_one(self):
        assert Settings(run=RunSection(max_workers=0)).run.max_workers == 1

    def test_log_level_case(self):
        assert RunSection(log_level="debug").log_level == "DEBUG"

    def test_environment_ignored(self, monkeypatch):
        monkeypatch.setenv("RUN", '{"seed": 5}')
        monkeypatch.setenv("SEED", "5")
        assert Settings().run.seed == 0


@pytest.mark.integration
class TestCommandLine:
    """Test the subcommands end to end and their exit statuses"""

    def test_classical(self, tmp_path):
        status, out = _run(tmp_path, "classical", _write_config(tmp_path))
        assert status == 0
        for name in ("manifest.json", "trajectory.csv", "energy.json", "gronwall.csv", "summary.json"):
            assert (out / name).exists()
        metadata, rows = read_csv(out / "trajectory.csv")
        assert metadata["subcommand"] == "classical"
        assert len(rows) == 11
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["energy_drift"] < 1e-4
        assert summary["nonlinearity_ratio"] <= 1.0

    def test_quantum(self, tmp_path):
        status, out = _run(tmp_path, "quantum", _write_config(tmp_path))
        assert status == 0
        metadata, rows = read_csv(out / "observables.csv")
        assert float(metadata["hbar"]) == 0.2
        assert len(rows) == 3
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["norm_drift"] < 1e-10
        assert summary["dimension"] == 32 * 35

    def test_correspondence(self, tmp_path):
        status, out = _run(tmp_path, "correspondence", _write_config(tmp_path))
        assert status == 0
        for name in ("sweep.csv", "sweep.json", "residuals.csv"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["completed_hbar"] == [0.4, 0.2]
        assert summary["pushforward_gap"] <= 1e-12
        assert len(summary["dirac_residuals"]) == 2

    def test_verify(self, tmp_path):
        status, out = _run(tmp_path, "verify", _write_config(tmp_path))
        assert status == 0
        _, rows = read_csv(out / "certificate.csv")
        assert all(r["passed"] == "true" for r in rows)
        assert {"number-root", "gronwall-envelope"} <= {r["name"] for r in rows}

    def test_seed_override(self, tmp_path):
        status, out = _run(tmp_path, "classical", _write_config(tmp_path), "--seed", "9")
        assert status == 0
        assert json.loads((out / "manifest.json").read_text(encoding="utf-8"))["seed"] == 9

    def test_bad_config_is_usage_error(self, tmp_path):
        status, _ = _run(tmp_path, "classical", _write_config(tmp_path, "[grid]\nk_points = -3\n"))
        assert status == 2

    def test_unbounded_potential_fails_verification(self, tmp_path):
        config = _write_config(tmp_path, SMALL_INI + "\n[potential]\npreset = harmonic\n")
        status, out = _run(tmp_path, "verify", config)
        assert status == 1
        assumptions = json.loads((out / "assumptions.json").read_text(encoding="utf-8"))
        assert not assumptions["passed"]

    def test_sweep_guard_is_usage_error(self, tmp_path):
        """Test that a sweep whose only hbar fails the width guard exits with 2"""
        config = _write_config(tmp_path, SMALL_INI.replace("hbar_values = 0.4, 0.2", "hbar_values = 0.05"))
        status, out = _run(tmp_path, "correspondence", config)
        assert status == 2
        _, rows = read_csv(out / "sweep.csv")
        assert rows == []

    def test_unexpected_error_is_numerical_failure(self, tmp_path, monkeypatch):
        def explode(settings, out, config_path=None):
            """Raise an error no handler knows"""
            raise RuntimeError("boom")

        monkeypatch.setitem(COMMANDS, "classical", explode)
        status, _ = _run(tmp_path, "classical", _write_config(tmp_path))
        assert status == 3

    @pytest.mark.slow
    def test_certificate_is_reproducible(self, tmp_path):
        config = _write_config(tmp_path)
        first = main(["verify", "--config", config, "--out", str(tmp_path / "a"), "--log-level", "WARNING"])
        second = main(["verify", "--config", config, "--out", str(tmp_path / "b"), "--log-level", "WARNING"])
        assert first == second == 0
        a = (tmp_path / "a" / "certificate.csv").read_text(encoding="utf-8")
        assert a == (tmp_path / "b" / "certificate.csv").read_text(encoding="utf-8")
