from typing import Any, Optional, Tuple


class FisheryError(Exception):
    """Base class for every error raised by the engine"""


class ValidationError(FisheryError, ValueError):
    """Inputs with wrong shapes, out-of-range values or inconsistent ledgers"""


class SolverError(FisheryError, RuntimeError):
    """A coalition's horizon optimization failed"""

    def __init__(self, message: str, coalition: Optional[Tuple[int, ...]] = None):
        self.coalition = coalition
        if coalition is not None:
            message = f"coalition {coalition}: {message}"
        super().__init__(message)


class InfeasibleBandError(SolverError):
    """The sustainability band cannot be met under the strict band policy"""

    def __init__(self, message: str, coalition: Optional[Tuple[int, ...]] = None,
                 violation: float = 0.0):
        self.violation = violation
        super().__init__(message, coalition)


class BudgetExceeded(FisheryError):
    """A run used up its wall-clock budget"""


class SimulationError(FisheryError):
    """A run aborted; `trace` holds the days completed before the failure"""

    def __init__(self, message: str, trace: Any = None):
        self.trace = trace
        super().__init__(message)
