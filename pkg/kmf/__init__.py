"""Kinetic mean-field toolkit: contraction constants, particle simulation and verification experiments"""

__version__ = '0.1.0'

from kmf.errors import (
    BlowUpError,
    ConfigError,
    EmptyIntervalError,
    ExperimentError,
    InadmissibleError,
    InvalidCoefficientsError,
    InvalidStateError,
    KmfError,
    NotPositiveDefiniteError,
    StabilityError,
    TransportError,
)
from kmf.model import Coefficients, FieldKind, ForceField, make_field, validate_constants
from kmf.rates import QForm, SearchMode, Variant, contraction_rate, eta0

__all__ = [
    'BlowUpError',
    'Coefficients',
    'ConfigError',
    'EmptyIntervalError',
    'ExperimentError',
    'FieldKind',
    'ForceField',
    'InadmissibleError',
    'InvalidCoefficientsError',
    'InvalidStateError',
    'KmfError',
    'NotPositiveDefiniteError',
    'QForm',
    'SearchMode',
    'StabilityError',
    'TransportError',
    'Variant',
    'contraction_rate',
    'eta0',
    'make_field',
    'validate_constants',
]
