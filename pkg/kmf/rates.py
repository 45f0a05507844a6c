"""
Explicit constants of the contraction argument

The Lyapunov form is Q(x, v) = b*beta*|x|^2 + 2 x.v + b*|v|^2.  Along the
synchronous coupling of two solutions, d/dt E Q <= -c1 E|x|^2 - c2 E|v|^2 with

    c1 = 2*beta - 2*eta - eps - eta*b
    c2 = (2*alpha_prime - eta)*b - 2 - k*alpha^2/eps

(k = 1, or k = 4 when alpha is doubled for the moment / chaos estimates), so
E Q decays at rate min(c1, c2) / lambda_max(Q).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from kmf.errors import (
    EmptyIntervalError,
    InadmissibleError,
    InvalidCoefficientsError,
    NotPositiveDefiniteError,
)
from kmf.model import Coefficients, ForceField, validate_constants

logger = logging.getLogger('kmf.rates')

# Grid resolution of the coarse search before local refinement
_B_GRID = 2001
_EPS_GRID = 201
_XATOL = 1e-10


class Variant(Enum):
    CONTRACTION = "contraction"
    DOUBLED_ALPHA = "doubled_alpha"

    @property
    def alpha_factor(self) -> float:
        return 2.0 if self is Variant.DOUBLED_ALPHA else 1.0


class SearchMode(Enum):
    FIXED_EPS = "fixed_eps"
    FULL = "full"
    FULL_LMI = "full_lmi"


@dataclass(frozen=True)
class QForm:
    b: float
    beta: float

    def __post_init__(self):
        if not (self.b > 0 and self.beta > 0):
            raise NotPositiveDefiniteError(f"QForm needs b > 0 and beta > 0, got b={self.b}, beta={self.beta}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.b * self.beta, 1.0], [1.0, self.b]])

    @property
    def determinant(self) -> float:
        return self.b * self.b * self.beta - 1.0

    @property
    def is_positive_definite(self) -> bool:
        return self.b > 1.0 / math.sqrt(self.beta) and self.determinant > 0

    @property
    def eigenvalues(self) -> Tuple[float, float]:
        trace = self.b * (self.beta + 1.0)
        root = math.sqrt(self.b * self.b * (self.beta - 1.0) ** 2 + 4.0)
        lam_max = 0.5 * (trace + root)
        # lam_min from the determinant avoids cancellation near the boundary
        lam_min = self.determinant / lam_max
        return lam_min, lam_max

    @property
    def lambda_min(self) -> float:
        return self.eigenvalues[0]

    @property
    def lambda_max(self) -> float:
        return self.eigenvalues[1]

    def block_matrix(self, dim: int) -> np.ndarray:
        """Gram matrix on R^{2d} with (x, v) ordering"""
        return np.kron(self.matrix, np.eye(dim))

    def __call__(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Evaluate Q over the last axis"""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return (self.b * self.beta * np.sum(x * x, axis=-1)
                + 2.0 * np.sum(x * v, axis=-1)
                + self.b * np.sum(v * v, axis=-1))


@dataclass(frozen=True)
class BInterval:
    """Open interval (lo, hi) of admissible b; hi may be +inf"""
    lo: float
    hi: float

    def contains(self, b: float) -> bool:
        return self.lo < b < self.hi

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.hi)


@dataclass(frozen=True)
class RateReport:
    alpha: float
    alpha_prime: float
    beta: float
    eta: float
    variant: Variant
    mode: SearchMode
    eta0: float
    b_interval: BInterval
    b_star: float
    eps_star: float
    c1: float
    c2: float
    rate_C: float
    equivalence_Cprime: float

    @property
    def qform(self) -> QForm:
        return QForm(self.b_star, self.beta)

    def to_row(self) -> Dict[str, object]:
        return {
            'alpha': self.alpha,
            'alpha_prime': self.alpha_prime,
            'beta': self.beta,
            'eta': self.eta,
            'variant': self.variant.value,
            'mode': self.mode.value,
            'eta0': self.eta0,
            'b_lo': self.b_interval.lo,
            'b_hi': self.b_interval.hi,
            'b_star': self.b_star,
            'eps_star': self.eps_star,
            'c1': self.c1,
            'c2': self.c2,
            'rate_C': self.rate_C,
            'Cprime': self.equivalence_Cprime,
        }

    def describe(self) -> str:
        lam_min, lam_max = self.qform.eigenvalues
        return "\n".join([
            f"coefficients   alpha={self.alpha:g} alpha'={self.alpha_prime:g} beta={self.beta:g} eta={self.eta:g}",
            f"variant/mode   {self.variant.value} / {self.mode.value}",
            f"eta0           {self.eta0:.10g}",
            f"b interval     ({self.b_interval.lo:.10g}, {self.b_interval.hi:.10g})",
            f"optimum        b={self.b_star:.10g} eps={self.eps_star:.10g}",
            f"dissipation    c1={self.c1:.10g} c2={self.c2:.10g}",
            f"Q spectrum     [{lam_min:.10g}, {lam_max:.10g}]",
            f"rate C         {self.rate_C:.10g}",
            f"C'             {self.equivalence_Cprime:.10g}",
        ])


def _positive_structure(coeffs: Coefficients) -> None:
    if coeffs.alpha_prime <= 0 or coeffs.beta <= 0:
        raise InvalidCoefficientsError("alpha_prime and beta must be positive")


def eta0(coeffs: Coefficients, variant=Variant.CONTRACTION) -> float:
    """
    Smallness threshold on eta = gamma + delta.

    Smaller root of 2 eta^2 - eta (2 + alpha_k^2/beta + beta + 4 alpha') + 2 alpha' beta,
    capped at beta^{3/2} / (1 + 2 sqrt(beta)).
    """
    _positive_structure(coeffs)
    variant = Variant(variant)
    alpha_k = variant.alpha_factor * coeffs.alpha
    a_p, beta = coeffs.alpha_prime, coeffs.beta

    linear = 2.0 + alpha_k * alpha_k / beta + beta + 4.0 * a_p
    constant = 2.0 * a_p * beta
    disc = linear * linear - 8.0 * constant
    # disc > 0: the polynomial is positive at 0 and negative at 2 alpha'
    root = 2.0 * constant / (linear + math.sqrt(disc))
    cap = beta * math.sqrt(beta) / (1.0 + 2.0 * math.sqrt(beta))
    return min(root, cap)


def dissipation_coefficients(coeffs: Coefficients, eta: float, b, eps, variant=Variant.CONTRACTION):
    """(c1, c2) at the given b and eps; broadcasts over array arguments"""
    k = Variant(variant).alpha_factor ** 2
    c1 = 2.0 * coeffs.beta - 2.0 * eta - eps - eta * b
    c2 = (2.0 * coeffs.alpha_prime - eta) * b - 2.0 - k * coeffs.alpha ** 2 / eps
    return c1, c2


def _check_eta(coeffs: Coefficients, eta: float, variant: Variant) -> float:
    if not np.isfinite(eta) or eta < 0:
        raise InvalidCoefficientsError(f"eta must be finite and non-negative, got {eta}")
    threshold = eta0(coeffs, variant)
    if eta >= threshold:
        raise InadmissibleError(
            f"gamma + delta = {eta:g} is not below the admissibility threshold eta0 = {threshold:.6g}",
            eta=eta, eta0=threshold,
        )
    return threshold


def _b_bounds(coeffs: Coefficients, eta: float, eps: float, variant: Variant) -> Tuple[float, float]:
    k = variant.alpha_factor ** 2
    lo = max((2.0 + k * coeffs.alpha ** 2 / eps) / (2.0 * coeffs.alpha_prime - eta),
             1.0 / math.sqrt(coeffs.beta))
    c1_free = 2.0 * coeffs.beta - 2.0 * eta - eps
    if eta > 0:
        hi = c1_free / eta
    else:
        hi = math.inf if c1_free > 0 else -math.inf
    return lo, hi


def admissible_b_interval(coeffs: Coefficients, eta: float, eps: float,
                          variant=Variant.CONTRACTION) -> BInterval:
    """Open interval of b where c1 > 0, c2 > 0 and Q is positive definite"""
    variant = Variant(variant)
    if not eps > 0:
        raise InvalidCoefficientsError(f"eps must be positive, got {eps}")
    threshold = _check_eta(coeffs, eta, variant)
    lo, hi = _b_bounds(coeffs, eta, eps, variant)
    if not hi > lo:
        raise EmptyIntervalError(
            f"no admissible b for eta={eta:g}, eps={eps:g}: lower {lo:.6g} >= upper {hi:.6g}",
            eta=eta, eta0=threshold,
        )
    return BInterval(lo, hi)


def _lambda_max(b, beta: float):
    return 0.5 * (b * (beta + 1.0) + np.sqrt(b * b * (beta - 1.0) ** 2 + 4.0))


def _lmi_rate(c1, c2, b, beta: float):
    """
    Largest C with diag(c1, c2) - C M(b) PSD: smaller root of
    (b^2 beta - 1) C^2 - b (c1 + beta c2) C + c1 c2 = 0.
    """
    quad = b * b * beta - 1.0
    lin = b * (c1 + beta * c2)
    const = c1 * c2
    disc = np.maximum(lin * lin - 4.0 * quad * const, 0.0)
    with np.errstate(divide='ignore', invalid='ignore'):
        root = 2.0 * const / (lin + np.sqrt(disc))
    return np.where((c1 > 0) & (c2 > 0) & (quad > 0), root, -np.inf)


def lmi_rate_eigh(c1: float, c2: float, qform: QForm) -> float:
    """Same quantity as the LMI objective, through a generalized eigensolve"""
    values = linalg.eigh(np.diag([c1, c2]), qform.matrix, eigvals_only=True)
    return float(values[0])


def _objective(coeffs: Coefficients, eta: float, variant: Variant, mode: SearchMode):
    beta = coeffs.beta

    def rate(b, eps):
        c1, c2 = dissipation_coefficients(coeffs, eta, b, eps, variant)
        if mode is SearchMode.FULL_LMI:
            return _lmi_rate(c1, c2, b, beta)
        return np.minimum(c1, c2) / _lambda_max(b, beta)

    return rate


def _search_b(rate, lo: float, hi: float, eps: float) -> Tuple[float, float]:
    """Grid scan then bounded Brent refinement; ties resolve to the smaller b"""
    upper = hi if math.isfinite(hi) else lo + 100.0 * max(1.0, lo)
    grid = np.linspace(lo, upper, _B_GRID)[1:-1]
    values = rate(grid, eps)
    best = int(np.argmax(values))
    left = grid[max(best - 1, 0)] if best > 0 else lo
    right = grid[min(best + 1, grid.size - 1)] if best < grid.size - 1 else upper

    result = optimize.minimize_scalar(
        lambda b: -float(rate(b, eps)),
        bounds=(left, right), method='bounded', options={'xatol': _XATOL},
    )
    b_star, value = float(result.x), -float(result.fun)
    if value < values[best]:
        b_star, value = float(grid[best]), float(values[best])
    return b_star, value


def _search_eps(coeffs: Coefficients, eta: float, variant: Variant, rate) -> Tuple[float, float, float]:
    def best_for(eps: float) -> Tuple[float, float]:
        lo, hi = _b_bounds(coeffs, eta, eps, variant)
        if not hi > lo:
            return math.nan, -math.inf
        return _search_b(rate, lo, hi, eps)

    eps_grid = np.linspace(0.0, 2.0 * coeffs.beta, _EPS_GRID)[1:]
    scores = [best_for(eps)[1] for eps in eps_grid]
    best = int(np.argmax(scores))
    left = eps_grid[best - 1] if best > 0 else eps_grid[0] * 0.5
    right = eps_grid[min(best + 1, eps_grid.size - 1)]

    result = optimize.minimize_scalar(
        lambda e: -best_for(e)[1], bounds=(left, right), method='bounded',
        options={'xatol': _XATOL},
    )
    eps_star = float(result.x)
    if -result.fun < scores[best]:
        eps_star = float(eps_grid[best])
    b_star, value = best_for(eps_star)
    return b_star, eps_star, value


def contraction_rate(coeffs: Coefficients, gamma_delta_sum: Optional[float] = None,
                     variant=Variant.CONTRACTION, search_mode=SearchMode.FIXED_EPS) -> RateReport:
    """
    Optimal (b, eps) and the resulting exponential rate.

    fixed_eps: eps = beta, maximize over b
    full:      maximize over (b, eps) with eps in (0, 2 beta]
    full_lmi:  as full, with the rate from diag(c1, c2) - C M(b) PSD
    """
    variant = Variant(variant)
    mode = SearchMode(search_mode)
    eta = coeffs.eta if gamma_delta_sum is None else float(gamma_delta_sum)
    threshold = _check_eta(coeffs, eta, variant)
    rate = _objective(coeffs, eta, variant, mode)

    if mode is SearchMode.FIXED_EPS:
        eps_star = coeffs.beta
        interval = admissible_b_interval(coeffs, eta, eps_star, variant)
        b_star, value = _search_b(rate, interval.lo, interval.hi, eps_star)
    else:
        b_star, eps_star, value = _search_eps(coeffs, eta, variant, rate)
        interval = admissible_b_interval(coeffs, eta, eps_star, variant)

    if not value > 0:
        raise EmptyIntervalError(f"no positive rate found for eta={eta:g}", eta=eta, eta0=threshold)

    c1, c2 = dissipation_coefficients(coeffs, eta, b_star, eps_star, variant)
    _, _, c_prime = equivalence_constants(QForm(b_star, coeffs.beta))
    report = RateReport(
        alpha=coeffs.alpha, alpha_prime=coeffs.alpha_prime, beta=coeffs.beta, eta=eta,
        variant=variant, mode=mode, eta0=threshold, b_interval=interval,
        b_star=b_star, eps_star=eps_star, c1=float(c1), c2=float(c2),
        rate_C=float(value), equivalence_Cprime=c_prime,
    )
    logger.debug("Rate report: %s", report.to_row())
    return report


def report_for_field(field: ForceField, variant=Variant.CONTRACTION,
                     search_mode=SearchMode.FIXED_EPS, sample_count: int = 4096) -> RateReport:
    """contraction_rate for a field whose declared constants are checked first"""
    validation = validate_constants(field, sample_count=sample_count)
    if not validation.ok:
        raise InvalidCoefficientsError(
            "declared constants do not match the field: " + "; ".join(validation.violations)
        )
    return contraction_rate(field.coeffs, field.coeffs.eta, variant, search_mode)


def equivalence_constants(qform: QForm) -> Tuple[float, float, float]:
    """(lambda_min, lambda_max, sqrt(lambda_max / lambda_min))"""
    if not qform.is_positive_definite:
        raise NotPositiveDefiniteError(
            f"Q is not positive definite for b={qform.b:g}, beta={qform.beta:g} (needs b > 1/sqrt(beta))"
        )
    lam_min, lam_max = qform.eigenvalues
    return lam_min, lam_max, math.sqrt(lam_max / lam_min)


def moment_bound(coeffs: Coefficients, eta: Optional[float] = None, initial_q: float = 0.0,
                 offset: float = 0.0, dim: Optional[int] = None) -> float:
    """
    Uniform-in-time bound on E(|x|^2 + |v|^2).

    With the doubled-alpha report: d/dt E Q <= C1 - C3 E Q, where
    C1 = 2 b d + (2/eps + b^2 eps / (2 alpha^2)) |A(0) + D(0)|^2, hence
    sup E Q <= max(E Q_0, C1 / C3).  `offset` is |A(0) + D(0)|.
    """
    report = contraction_rate(coeffs, eta, Variant.DOUBLED_ALPHA, SearchMode.FIXED_EPS)
    dim = coeffs.dim if dim is None else dim
    b, eps = report.b_star, report.eps_star
    c1_const = 2.0 * b * dim
    if offset:
        if coeffs.alpha == 0:
            return math.inf
        c1_const += (2.0 / eps + b * b * eps / (2.0 * coeffs.alpha ** 2)) * offset ** 2
    bound_q = max(initial_q, c1_const / report.rate_C)
    return bound_q / report.qform.lambda_min


def interaction_fluctuation_bound(gamma: float, second_moment_x: float) -> float:
    """Bound on E|(C * rho)(X) - empirical mean of C|^2 times N"""
    return 8.0 * gamma * gamma * second_moment_x


def chaos_constant(coeffs: Coefficients, second_moment_x: float, eta: Optional[float] = None) -> float:
    """
    N-free constant K with sup_t E(|X^N - X|^2 + |V^N - V|^2) <= K / N.
    """
    report = contraction_rate(coeffs, eta, Variant.DOUBLED_ALPHA, SearchMode.FIXED_EPS)
    fluctuation = interaction_fluctuation_bound(coeffs.gamma, second_moment_x)
    if fluctuation == 0:
        return 0.0
    if coeffs.alpha == 0:
        return math.inf
    b, eps = report.b_star, report.eps_star
    c2_const = fluctuation * (2.0 / eps + eps * b * b / (2.0 * coeffs.alpha ** 2))
    return (c2_const / report.rate_C) / report.qform.lambda_min
