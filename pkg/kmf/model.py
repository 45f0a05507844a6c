"""
Force fields of the kinetic mean-field model

A particle at (x, v) feels the drift  -A(v) - B(x) - (C * law)(x)  with
B(x) = beta * x + D(x).  A is Lipschitz (alpha) and strongly monotone
(alpha_prime), D and C are Lipschitz (delta, gamma) and C is odd.
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np

from kmf.errors import InvalidCoefficientsError, InvalidStateError

logger = logging.getLogger('kmf.model')

VectorMap = Callable[[np.ndarray], np.ndarray]

# Relative slack when comparing observed Lipschitz ratios to declared constants
RATIO_TOLERANCE = 1e-9


class FieldKind(Enum):
    LINEAR = "linear"
    SINUSOIDAL = "sinusoidal"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Coefficients:
    """Declared structural constants of a force field"""
    alpha: float
    alpha_prime: float
    beta: float
    gamma: float = 0.0
    delta: float = 0.0
    dim: int = 1

    def __post_init__(self):
        values = {
            'alpha': self.alpha, 'alpha_prime': self.alpha_prime, 'beta': self.beta,
            'gamma': self.gamma, 'delta': self.delta,
        }
        for name, value in values.items():
            if not np.isfinite(value):
                raise InvalidCoefficientsError(f"{name} must be finite, got {value}")
            if value < 0:
                raise InvalidCoefficientsError(f"{name} must be non-negative, got {value}")
        if self.alpha_prime > self.alpha:
            raise InvalidCoefficientsError(
                f"alpha_prime ({self.alpha_prime}) cannot exceed alpha ({self.alpha})"
            )
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidCoefficientsError(f"dim must be a positive integer, got {self.dim}")

    @property
    def eta(self) -> float:
        """Total interaction strength gamma + delta"""
        return self.gamma + self.delta

    @property
    def stiffness(self) -> float:
        """Sum of all Lipschitz constants, used by the step-size guard"""
        return self.alpha + self.beta + self.gamma + self.delta

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if x.shape != v.shape:
            raise InvalidStateError(f"position shape {x.shape} != velocity shape {v.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise InvalidStateError("phase point has non-finite entries")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'v', v)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]


@dataclass(frozen=True)
class ForceField:
    """
    A, D and C act coordinatewise on arrays whose last axis is the spatial one.
    mean_field optionally evaluates (1/M) sum_j C(p - s_j) for every p in O(M).
    """
    kind: FieldKind
    coeffs: Coefficients
    A: VectorMap
    D: VectorMap
    C: VectorMap
    mean_field: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def B(self, x: np.ndarray) -> np.ndarray:
        return self.coeffs.beta * x + self.D(x)

    @property
    def is_linear(self) -> bool:
        return self.kind is FieldKind.LINEAR

    @property
    def confinement(self) -> float:
        """Slope of B for the linear field"""
        if not self.is_linear:
            raise InvalidCoefficientsError("confinement slope is only defined for the linear field")
        return self.coeffs.beta

    def offset(self) -> np.ndarray:
        """Constant part A(0) + D(0) of the drift"""
        zero = np.zeros(self.coeffs.dim)
        return np.asarray(self.A(zero) + self.D(zero), dtype=float)


def _linear_mean_field(gamma: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    def evaluate(points: np.ndarray, sources: np.ndarray) -> np.ndarray:
        return gamma * (points - sources.mean(axis=-2, keepdims=True))
    return evaluate


def _sinusoidal_mean_field(gamma: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    # sin(p - s) = sin p cos s - cos p sin s, so the empirical average splits
    def evaluate(points: np.ndarray, sources: np.ndarray) -> np.ndarray:
        mean_cos = np.cos(sources).mean(axis=-2, keepdims=True)
        mean_sin = np.sin(sources).mean(axis=-2, keepdims=True)
        return gamma * (np.sin(points) * mean_cos - np.cos(points) * mean_sin)
    return evaluate


def make_field(
    kind,
    coeffs: Coefficients,
    A: Optional[VectorMap] = None,
    D: Optional[VectorMap] = None,
    C: Optional[VectorMap] = None,
    offset: float = 0.0,
) -> ForceField:
    """
    Build a force field.

    linear:      A(v) = alpha v, D(x) = offset, C(z) = gamma z  (requires alpha == alpha_prime, delta == 0)
    sinusoidal:  A(v) = alpha v, D(x) = delta sin x, C(z) = gamma sin z
    custom:      caller supplies A, D and C; declared constants are checked by validate_constants
    """
    kind = FieldKind(kind)

    if kind is FieldKind.LINEAR:
        if coeffs.alpha != coeffs.alpha_prime:
            raise InvalidCoefficientsError(
                "the linear field has exact constants: alpha must equal alpha_prime"
            )
        if coeffs.delta != 0:
            raise InvalidCoefficientsError(
                f"the linear field has a constant D: delta must be 0, got {coeffs.delta}"
            )
        if not np.isfinite(offset):
            raise InvalidCoefficientsError(f"offset must be finite, got {offset}")
        alpha, gamma, d0 = coeffs.alpha, coeffs.gamma, float(offset)
        return ForceField(
            kind=kind, coeffs=coeffs,
            A=lambda v: alpha * v,
            D=lambda x: np.full_like(np.asarray(x, dtype=float), d0),
            C=lambda z: gamma * z,
            mean_field=_linear_mean_field(gamma),
        )

    if offset != 0:
        raise InvalidCoefficientsError("a constant offset is only supported by the linear field")

    if kind is FieldKind.SINUSOIDAL:
        alpha, delta, gamma = coeffs.alpha, coeffs.delta, coeffs.gamma
        return ForceField(
            kind=kind, coeffs=coeffs,
            A=lambda v: alpha * v,
            D=lambda x: delta * np.sin(x),
            C=lambda z: gamma * np.sin(z),
            mean_field=_sinusoidal_mean_field(gamma),
        )

    if A is None or D is None or C is None:
        raise InvalidCoefficientsError("custom fields need A, D and C callables")
    return ForceField(kind=kind, coeffs=coeffs, A=A, D=D, C=C)


def drift(field: ForceField, point: PhasePoint, mean_force: np.ndarray) -> np.ndarray:
    """Velocity drift -A(v) - B(x) - mean_force at one phase point"""
    mean_force = np.asarray(mean_force, dtype=float)
    if not np.all(np.isfinite(mean_force)):
        raise InvalidStateError("mean force has non-finite entries")
    if mean_force.shape[-1] != point.dim:
        raise InvalidStateError(
            f"mean force dimension {mean_force.shape[-1]} != phase dimension {point.dim}"
        )
    return -field.A(point.v) - field.B(point.x) - mean_force


@dataclass
class ValidationReport:
    """Observed constants of a field on random sample pairs"""
    alpha_hat: float
    alpha_prime_hat: float
    delta_hat: float
    gamma_hat: float
    odd_residual: float
    sample_count: int
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data['ok'] = self.ok
        return data


def _pair_ratios(fn: VectorMap, u: np.ndarray, w: np.ndarray):
    du = u - w
    df = fn(u) - fn(w)
    norm2 = np.einsum('ij,ij->i', du, du)
    keep = norm2 > 0
    lipschitz = np.sqrt(np.einsum('ij,ij->i', df, df)[keep] / norm2[keep])
    monotone = np.einsum('ij,ij->i', du, df)[keep] / norm2[keep]
    return lipschitz, monotone


def validate_constants(field: ForceField, sample_count: int = 4096, rng_seed: int = 0,
                       scale: float = 3.0) -> ValidationReport:
    """
    Estimate the Lipschitz / monotonicity ratios of A, D, C on random pairs and
    compare them with the declared constants.  Never raises for a mismatch.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    coeffs = field.coeffs
    rng = np.random.default_rng(rng_seed)
    d = coeffs.dim

    def draw():
        return scale * rng.standard_normal((sample_count, d))

    a_lip, a_mono = _pair_ratios(field.A, draw(), draw())
    d_lip, _ = _pair_ratios(field.D, draw(), draw())
    c_lip, _ = _pair_ratios(field.C, draw(), draw())

    z = draw()
    odd_residual = float(np.max(np.abs(field.C(z) + field.C(-z))))

    report = ValidationReport(
        alpha_hat=float(a_lip.max()),
        alpha_prime_hat=float(a_mono.min()),
        delta_hat=float(d_lip.max()),
        gamma_hat=float(c_lip.max()),
        odd_residual=odd_residual,
        sample_count=sample_count,
    )

    def exceeds(observed: float, declared: float) -> bool:
        return observed > declared * (1 + RATIO_TOLERANCE) + RATIO_TOLERANCE

    if exceeds(report.alpha_hat, coeffs.alpha):
        report.violations.append(f"A Lipschitz ratio {report.alpha_hat:.6g} > alpha {coeffs.alpha}")
    if report.alpha_prime_hat < coeffs.alpha_prime * (1 - RATIO_TOLERANCE) - RATIO_TOLERANCE:
        report.violations.append(
            f"A monotonicity ratio {report.alpha_prime_hat:.6g} < alpha_prime {coeffs.alpha_prime}"
        )
    if exceeds(report.delta_hat, coeffs.delta):
        report.violations.append(f"D Lipschitz ratio {report.delta_hat:.6g} > delta {coeffs.delta}")
    if exceeds(report.gamma_hat, coeffs.gamma):
        report.violations.append(f"C Lipschitz ratio {report.gamma_hat:.6g} > gamma {coeffs.gamma}")
    if odd_residual > 1e-12 * max(1.0, coeffs.gamma * scale):
        report.violations.append(f"C is not odd (residual {odd_residual:.3g})")

    if report.violations:
        logger.warning("Field constants mismatch: %s", "; ".join(report.violations))
    return report
