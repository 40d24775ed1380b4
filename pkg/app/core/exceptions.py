import logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class LabError(Exception):
    """Base class for every failure the lab reports to the command line."""

    exit_code: int = EXIT_NUMERICAL

    def __init__(self, detail: str = "Error running the Nelson model computation."):
        self.detail = detail
        super().__init__(detail)


class ConfigurationError(LabError):
    exit_code = EXIT_USAGE

    def __init__(self, detail: str = "Invalid configuration."):
        super().__init__(detail)


class GuardViolationError(ConfigurationError):
    """A discretization guard cannot be satisfied with the configured sizes."""

    def __init__(self, detail: str, hint: str | None = None):
        self.hint = hint
        super().__init__(f"{detail} ({hint})" if hint else detail)


class ShapeError(LabError):
    exit_code = EXIT_USAGE

    def __init__(self, detail: str = "Array shape does not match the grid."):
        super().__init__(detail)


class PropertyViolationError(LabError):
    exit_code = EXIT_PROPERTY_FAILURE

    def __init__(self, detail: str, replay_path: str | None = None):
        self.replay_path = replay_path
        super().__init__(detail)


class NumericalConsistencyError(LabError):
    def __init__(self, detail: str = "Imaginary residue above tolerance."):
        super().__init__(detail)


class IntegrationBlowupError(LabError):
    def __init__(self, detail: str, last_good_time: float):
        self.last_good_time = last_good_time
        super().__init__(f"{detail} (last good time t={last_good_time:.6g})")


class TruncationOverflowError(LabError):
    def __init__(self, detail: str, leakage: float):
        self.leakage = leakage
        super().__init__(f"{detail} (leakage={leakage:.3e})")


class AssemblyError(LabError):
    def __init__(self, detail: str = "Assembled operator is not Hermitian."):
        super().__init__(detail)


class EvolutionError(LabError):
    def __init__(self, detail: str = "Time evolution failed."):
        super().__init__(detail)


class KrylovConvergenceError(EvolutionError):
    """Raised by a single Lanczos step; retried before surfacing as EvolutionError."""

    def __init__(self, detail: str, error_estimate: float):
        self.error_estimate = error_estimate
        super().__init__(f"{detail} (estimate={error_estimate:.3e})")


def lab_exception_handler(exc: LabError) -> int:
    label = type(exc).__name__
    logger.error(f"{label}: {exc.detail}")
    if isinstance(exc, PropertyViolationError) and exc.replay_path:
        logger.error(f"Replay file written to {exc.replay_path}")
    return exc.exit_code


def generic_exception_handler(exc: Exception) -> int:
    logger.exception(f"Unexpected error: {exc}")
    return EXIT_NUMERICAL


__all__ = [
    "EXIT_OK",
    "EXIT_PROPERTY_FAILURE",
    "EXIT_USAGE",
    "EXIT_NUMERICAL",
    "LabError",
    "ConfigurationError",
    "GuardViolationError",
    "ShapeError",
    "PropertyViolationError",
    "NumericalConsistencyError",
    "IntegrationBlowupError",
    "TruncationOverflowError",
    "AssemblyError",
    "EvolutionError",
    "KrylovConvergenceError",
    "lab_exception_handler",
    "generic_exception_handler",
]
