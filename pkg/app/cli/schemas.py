from datetime import datetime
from typing import Literal

from pydantic import BaseModel, Field

Subcommand = Literal["classical", "quantum", "correspondence", "verify"]

# ============================================================================
# RUN MANIFEST
# ============================================================================

class RunManifest(BaseModel):
    subcommand: Subcommand
    config_path: str | None = Field(None, description="Configuration file, None for built-in defaults")
    out: str = Field(..., description="Output directory")
    seed: int
    timestamp: datetime
    config_hash: str = Field(..., description="Hash of the resolved configuration")

    def header(self) -> dict[str, str | int]:
        """Metadata lines embedded in every output file of the run."""
        return {"config_hash": self.config_hash, "seed": self.seed, "subcommand": self.subcommand}


class BaseSummary(BaseModel):
    success: bool = Field(..., description="Whether the command met its acceptance checks")
    files: list[str] = Field(default_factory=list, description="Files written by the command")
    error: str | None = Field(None, description="Error message if the command failed")


# ============================================================================
# COMMAND SUMMARIES
# ============================================================================

class ClassicalSummary(BaseSummary):
    picture: str
    steps: int
    energy_drift: float = Field(..., description="max_t |H(u(t)) - H(u0)| / |H(u0)|")
    duhamel_residual: float
    gronwall_violations: int
    nonlinearity_ratio: float = Field(..., description="max_t |N(u(t))| / c1, at most 1")


class QuantumSummary(BaseSummary):
    hbar: float
    dimension: int
    norm_drift: float
    energy_drift: float
    max_leakage: float


class CorrespondenceSummary(BaseSummary):
    completed_hbar: list[float]
    failed_hbar: dict[str, str] = Field(default_factory=dict)
    monotone: dict[str, bool] = Field(default_factory=dict)
    dirac_residuals: list[float] = Field(default_factory=list, description="One per quadrature step, coarse first")
    dirac_order: float | None = Field(None, description="Observed order of the Dirac residual in the quadrature step")
    cloud_residual: float | None = None
    cloud_standard_error: float | None = None
    pushforward_gap: float | None = None


class VerifySummary(BaseSummary):
    assumptions_passed: bool
    cases: int
    failed: list[str] = Field(default_factory=list)
    replay_path: str | None = None
