"""
Wasserstein-2 between equal-size empirical phase-space clouds

Clouds live in R^{2d} with coordinates (x_0..x_{d-1}, v_0..v_{d-1}) and
uniform weights.  The qform ground cost Q(p - q) is the squared Euclidean
cost after the linear map U with U^T U = kron(M(b), I_d).
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from scipy import linalg, optimize, special
from scipy.spatial.distance import cdist

from kmf.config import get_config
from kmf.dynamics import CoupledPair, ParticleState, replica_mean_and_stderr
from kmf.errors import InvalidStateError, NotPositiveDefiniteError, TransportError
from kmf.rates import QForm

logger = logging.getLogger('kmf.transport')


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] % 2:
            raise InvalidStateError(f"a cloud is an (n, 2d) array with n >= 1, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidStateError("cloud has non-finite entries")
        object.__setattr__(self, 'points', points)

    @classmethod
    def from_state(cls, state: ParticleState, replica: int = 0) -> 'PointCloud':
        return cls(np.hstack([state.X[replica], state.V[replica]]))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1] // 2

    def translated(self, shift: np.ndarray) -> 'PointCloud':
        return PointCloud(self.points + np.asarray(shift, dtype=float))


class MetricKind(Enum):
    EUCLIDEAN = "euclidean"
    QFORM = "qform"


@dataclass(frozen=True)
class GroundMetric:
    kind: MetricKind = MetricKind.EUCLIDEAN
    qform: Optional[QForm] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', MetricKind(self.kind))
        if self.kind is MetricKind.QFORM:
            if self.qform is None or not self.qform.is_positive_definite:
                raise NotPositiveDefiniteError("qform ground cost needs a positive definite QForm")

    @classmethod
    def euclidean(cls) -> 'GroundMetric':
        return cls(MetricKind.EUCLIDEAN)

    @classmethod
    def from_qform(cls, qform: QForm) -> 'GroundMetric':
        return cls(MetricKind.QFORM, qform)

    def _embed(self, points: np.ndarray) -> np.ndarray:
        if self.kind is MetricKind.EUCLIDEAN:
            return points
        dim = points.shape[1] // 2
        upper = linalg.cholesky(self.qform.block_matrix(dim), lower=False)
        return points @ upper.T

    def cost(self, p: np.ndarray, q: np.ndarray) -> float:
        diff = self._embed(np.atleast_2d(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)))
        return float(np.sum(diff * diff))

    def cost_matrix(self, a: PointCloud, b: PointCloud) -> np.ndarray:
        return cdist(self._embed(a.points), self._embed(b.points), 'sqeuclidean')


@dataclass
class TransportPlan:
    objective: float
    permutation: Optional[np.ndarray] = None
    coupling: Optional[np.ndarray] = None
    converged: bool = True
    marginal_error: float = 0.0
    iterations: int = 0


def _check_pair(a: PointCloud, b: PointCloud) -> None:
    if a.n != b.n:
        raise TransportError(f"clouds must have equal size, got {a.n} and {b.n}")
    if a.points.shape[1] != b.points.shape[1]:
        raise TransportError("clouds live in different phase-space dimensions")


def w2_exact(a: PointCloud, b: PointCloud, metric: Optional[GroundMetric] = None,
             cap: Optional[int] = None) -> Tuple[float, TransportPlan]:
    """Exact empirical W2 through optimal assignment on the squared-cost matrix"""
    metric = metric or GroundMetric.euclidean()
    _check_pair(a, b)
    cap = cap or get_config().ASSIGNMENT_CAP
    if a.n > cap:
        raise TransportError(
            f"exact assignment is capped at n={cap} (got {a.n}); use w2_entropic for larger clouds"
        )
    costs = metric.cost_matrix(a, b)
    rows, cols = optimize.linear_sum_assignment(costs)
    objective = float(costs[rows, cols].mean())
    plan = TransportPlan(objective=objective, permutation=cols)
    return math.sqrt(max(objective, 0.0)), plan


def w2_bruteforce(a: PointCloud, b: PointCloud, metric: Optional[GroundMetric] = None) -> float:
    """Minimum over all n! permutations; only meant for n <= 8"""
    metric = metric or GroundMetric.euclidean()
    _check_pair(a, b)
    if a.n > 8:
        raise TransportError("brute force is limited to n <= 8")
    costs = metric.cost_matrix(a, b)
    index = np.arange(a.n)
    best = min(costs[index, list(perm)].mean() for perm in itertools.permutations(range(a.n)))
    return math.sqrt(max(float(best), 0.0))


def w2_entropic(a: PointCloud, b: PointCloud, metric: Optional[GroundMetric] = None,
                reg_eps: float = 0.05, max_iter: int = 10000,
                tol: float = 1e-8) -> Tuple[float, TransportPlan]:
    """
    Log-domain Sinkhorn.  The estimate is sqrt(<P, C>) for the entropic plan P,
    which sits above the exact value by at most sqrt-order reg_eps * log n.
    """
    if not reg_eps > 0:
        raise TransportError(f"reg_eps must be positive, got {reg_eps}")
    metric = metric or GroundMetric.euclidean()
    _check_pair(a, b)

    costs = metric.cost_matrix(a, b)
    n = a.n
    log_w = np.full(n, -math.log(n))
    weights = np.full(n, 1.0 / n)
    scaled = -costs / reg_eps

    u = np.zeros(n)
    v = np.zeros(n)
    best = (math.inf, u, v, 0)
    err = math.inf
    ii = 0
    for ii in range(1, max_iter + 1):
        v = log_w - special.logsumexp(scaled + u[:, None], axis=0)
        u = log_w - special.logsumexp(scaled + v[None, :], axis=1)
        # rows are exact after the u update; the columns carry the error
        column = np.exp(special.logsumexp(scaled + u[:, None] + v[None, :], axis=0))
        err = float(np.abs(column - weights).sum())
        if err < best[0]:
            best = (err, u, v, ii)
        if err < tol:
            break

    err, u, v, used = best
    coupling = np.exp(scaled + u[:, None] + v[None, :])
    objective = float(np.sum(coupling * costs))
    converged = err < tol
    if not converged:
        logger.warning("Sinkhorn did not converge in %d iterations (marginal error %.3g)", max_iter, err)
    plan = TransportPlan(objective=objective, coupling=coupling, converged=converged,
                         marginal_error=err, iterations=used)
    return math.sqrt(max(objective, 0.0)), plan


@dataclass(frozen=True)
class QDistanceEstimate:
    value: float
    stderr: float
    n_samples: int


def coupled_qdistance(pairs: Union[CoupledPair, Iterable[CoupledPair]], qform: QForm) -> QDistanceEstimate:
    """
    Ensemble average of Q over paired differences, an upper bound on the
    squared d_Q distance between the two laws.
    """
    if isinstance(pairs, CoupledPair):
        pairs = [pairs]
    blocks = []
    for pair in pairs:
        dx, dv = pair.differences()
        blocks.append(qform(dx, dv))
    if not blocks:
        raise TransportError("coupled_qdistance needs at least one coupled pair")
    values = np.concatenate(blocks, axis=0)
    mean, stderr = replica_mean_and_stderr(values)
    return QDistanceEstimate(value=mean, stderr=stderr, n_samples=int(values.size))


def second_moment(cloud: PointCloud) -> float:
    """Empirical mean of |x|^2 + |v|^2"""
    return float(np.mean(np.sum(cloud.points ** 2, axis=1)))
