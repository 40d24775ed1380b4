from typing import Any

from pydantic import BaseModel, Field, field_validator

# ============================================================================
# MODEL ASSUMPTIONS
# ============================================================================

class NormCheck(BaseModel):
    name: str = Field(..., description="Quantity checked, e.g. |omega^(1/2) chi|")
    value: float = Field(..., description="Value on the configured grid")
    ceiling: float = Field(..., description="Configured upper bound")
    passed: bool = Field(..., description="value is finite and below the ceiling")
    grid_dependent: bool = Field(False, description="Value changes when the grid extent is doubled")


class AssumptionReport(BaseModel):
    checks: list[NormCheck] = Field(default_factory=list)
    passed: bool = Field(..., description="Every check passed")
    flags: list[str] = Field(default_factory=list, description="Human-readable warnings")

    def value(self, name: str) -> float:
        for check in self.checks:
            if check.name == name:
                return check.value
        raise KeyError(name)


# ============================================================================
# CLASSICAL DYNAMICS
# ============================================================================

class GronwallRow(BaseModel):
    t: float
    gap: float = Field(..., description="|u1(t) - u2(t)| in X^0")
    envelope: float = Field(..., description="exp(C t) * gap(0)")


class GronwallReport(BaseModel):
    constant: float = Field(..., description="Lipschitz constant C assembled from the uniqueness argument")
    fitted_rate: float = Field(..., description="Least-squares exponential rate of log gap(t)")
    initial_gap: float
    rows: list[GronwallRow] = Field(default_factory=list)
    violations: int = Field(0, description="Rows with gap above the envelope")


class EnergyReport(BaseModel):
    dt: float
    horizon: float
    drift: float = Field(..., description="max_t |H(u(t)) - H(u(0))| / max(1, |H(u(0))|)")
    initial_energy: float


# ============================================================================
# CORRESPONDENCE
# ============================================================================

class SweepRow(BaseModel):
    hbar: float
    t: float
    q_error: float = Field(..., description="max_j |<q_j> - q_cl,j(t)|")
    p_error: float = Field(..., description="max_j |<p_j> - p_cl,j(t)|")
    field_errors: list[float] = Field(default_factory=list, description="Per-mode |<a_i> - sqrt(dk) alpha_cl,i|")
    interaction_field_error: float = Field(..., description="Interaction picture vs pulled-back classical modes")
    characteristic_error: float = Field(..., description="Worst error over the test-point panel")
    leakage: float = Field(..., description="Weight on the top occupation shell")
    leakage_ok: bool = True

    @property
    def field_error(self) -> float:
        return max(self.field_errors, default=0.0)


class SweepReport(BaseModel):
    hbar_values: list[float] = Field(..., description="Completed hbar values, strictly decreasing")
    rows: list[SweepRow] = Field(default_factory=list)
    failures: dict[str, str] = Field(default_factory=dict, description="hbar -> guard failure message")
    monotone: dict[str, bool] = Field(default_factory=dict, description="Column -> monotone within slack")
    config_hash: str = ""
    seed: int = 0
    convention: str = Field("", description="Coherent-state centering convention used")

    @field_validator("hbar_values")
    @classmethod
    def _strictly_decreasing(cls, values: list[float]) -> list[float]:
        if any(b >= a for a, b in zip(values, values[1:], strict=False)):
            raise ValueError("hbar values must be strictly decreasing")
        return values

    def column(self, name: str, t: float) -> list[float]:
        out = []
        for row in self.rows:
            if abs(row.t - t) < 1e-12:
                out.append(row.field_error if name == "field_error" else getattr(row, name))
        return out


# ============================================================================
# ESTIMATES
# ============================================================================

class EstimateCase(BaseModel):
    name: str
    lemma: str = Field(..., description="Estimate this case certifies")
    recipe: str = Field(..., description="Which norms and constants enter the bound")
    hbar: float | None = Field(None, description="None for hbar-independent classical cases")
    samples: int
    tolerance: float
    worst_ratio: float = Field(..., description="max lhs/rhs over the samples")
    passed: bool
    fitted: bool = Field(False, description="Constants fitted once and frozen")
    violation: dict[str, Any] | None = Field(None, description="Serialized violating sample")
