from typing_extensions import TypedDict


class ObservableRecord(TypedDict):
    """Expectation values of one quantum state"""
    q_mean: list[float]
    p_mean: list[float]
    q_second: list[float]
    p_second: list[float]
    field_modes: list[complex]
    number: float
    field_moment: float
    energy: float
    top_shell_weight: float


class ResidualRecord(TypedDict):
    """Characteristic-equation residual at one quadrature step"""
    label: str
    quadrature_dt: float
    residual: float
    standard_error: float
    samples: int
