from .grids import KGrid, ParticleGrid
from .model import Dispersion, FormFactor, FormFactorPreset, ModelConfig, Potential
from .records import ObservableRecord, ResidualRecord
from .reports import (
    AssumptionReport,
    EnergyReport,
    EstimateCase,
    GronwallReport,
    GronwallRow,
    NormCheck,
    SweepReport,
    SweepRow,
)
from .state import ClassicalState, QuantumState, TestPoint, Trajectory

__all__ = [
    "KGrid",
    "ParticleGrid",
    "Dispersion",
    "FormFactor",
    "FormFactorPreset",
    "ModelConfig",
    "Potential",
    "ObservableRecord",
    "ResidualRecord",
    "AssumptionReport",
    "EnergyReport",
    "EstimateCase",
    "GronwallReport",
    "GronwallRow",
    "NormCheck",
    "SweepReport",
    "SweepRow",
    "ClassicalState",
    "QuantumState",
    "TestPoint",
    "Trajectory",
]
