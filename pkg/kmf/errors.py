"""
Exception hierarchy for the kinetic mean-field toolkit
"""

from typing import Optional


class KmfError(Exception):
    """Base class for every error raised by kmf"""


class ConfigError(KmfError, ValueError):
    """Malformed, unknown or inconsistent configuration"""


class InvalidCoefficientsError(KmfError, ValueError):
    """Coefficient bundle violates its invariants or a field disagrees with it"""


class InvalidStateError(KmfError, ValueError):
    """Non-finite or dimension-inconsistent phase-space data"""


class InadmissibleError(KmfError, ValueError):
    """Interaction strength gamma + delta is not below the smallness threshold"""

    def __init__(self, message: str, eta: Optional[float] = None, eta0: Optional[float] = None):
        super().__init__(message)
        self.eta = eta
        self.eta0 = eta0


class EmptyIntervalError(InadmissibleError):
    """No Lyapunov parameter b satisfies both dissipation conditions"""


class NotPositiveDefiniteError(KmfError, ValueError):
    """Quadratic form is degenerate or indefinite"""


class StabilityError(KmfError, ValueError):
    """Time step violates the explicit-scheme stability guard"""

    def __init__(self, message: str, dt: float, bound: float):
        super().__init__(message)
        self.dt = dt
        self.bound = bound


class BlowUpError(KmfError, ArithmeticError):
    """A simulation produced non-finite entries"""

    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


class TransportError(KmfError, ValueError):
    """Transport problem cannot be solved as requested"""


class ExperimentError(KmfError, RuntimeError):
    """An experiment cannot produce a meaningful measurement"""
