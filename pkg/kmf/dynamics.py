"""
Euler-Maruyama engines for the particle system, the nonlinear (McKean) process
and synchronous couplings

Arrays are stored as (R, N, d): R independent replicas of N particles in d
dimensions.  Replica r of a batch that starts at replica_id uses the noise
addresses of replica replica_id + r, so splitting replicas into batches never
changes a trajectory.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from kmf.config import get_config
from kmf.errors import BlowUpError, InvalidCoefficientsError, InvalidStateError, StabilityError
from kmf.model import ForceField
from kmf.noise import NoiseStream, StreamTag

logger = logging.getLogger('kmf.dynamics')

STABILITY_LIMIT = 0.5

Vector = Union[float, List[float], Tuple[float, ...], np.ndarray]


@dataclass
class ParticleState:
    t: float
    X: np.ndarray
    V: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if V.ndim == 2:
            V = V[None]
        if X.ndim != 3 or X.shape != V.shape:
            raise InvalidStateError(f"X {X.shape} and V {V.shape} must both be (N, d) or (R, N, d)")
        if X.shape[1] < 1:
            raise InvalidStateError("a particle state needs at least one particle")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
            raise InvalidStateError("particle state has non-finite entries")
        self.X = X
        self.V = V

    @property
    def n_replicas(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.X.shape[2]

    def replica(self, index: int) -> 'ParticleState':
        return ParticleState(self.t, self.X[index], self.V[index], self.step_index)

    def copy(self) -> 'ParticleState':
        return ParticleState(self.t, self.X.copy(), self.V.copy(), self.step_index)


class LawKind(Enum):
    DIRAC = "dirac"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class InitialLaw:
    """Product law: x ~ N(mean_x, std^2 I), v ~ N(mean_v, std^2 I); dirac ignores std"""
    kind: LawKind = LawKind.GAUSSIAN
    mean_x: Vector = 0.0
    mean_v: Vector = 0.0
    std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', LawKind(self.kind))
        if self.std < 0:
            raise InvalidStateError("initial law std must be non-negative")

    def means(self, dim: int) -> Tuple[np.ndarray, np.ndarray]:
        mx = np.broadcast_to(np.asarray(self.mean_x, dtype=float), (dim,)).copy()
        mv = np.broadcast_to(np.asarray(self.mean_v, dtype=float), (dim,)).copy()
        return mx, mv

    def sample(self, noise: NoiseStream, n_particles: int, dim: int, replica_start: int = 0,
               n_replicas: int = 1, tag: int = StreamTag.INITIAL) -> ParticleState:
        mx, mv = self.means(dim)
        shape = (n_replicas, n_particles, dim)
        X = np.broadcast_to(mx, shape).copy()
        V = np.broadcast_to(mv, shape).copy()
        if self.kind is LawKind.GAUSSIAN and self.std > 0:
            X += self.std * noise.normals(0, n_particles, dim, replica_start, n_replicas, tag)
            V += self.std * noise.normals(1, n_particles, dim, replica_start, n_replicas, tag)
        return ParticleState(0.0, X, V)


def check_stability(field: ForceField, dt: float) -> None:
    bound = STABILITY_LIMIT / max(field.coeffs.stiffness, 1e-300)
    if not (dt > 0 and dt * field.coeffs.stiffness < STABILITY_LIMIT):
        raise StabilityError(
            f"dt={dt:g} violates dt * (alpha + beta + gamma + delta) < {STABILITY_LIMIT}",
            dt=dt, bound=bound,
        )


def mean_field_forces(points: np.ndarray, sources: np.ndarray, field: ForceField,
                      chunk: Optional[int] = None) -> np.ndarray:
    """
    (1/M) sum_j C(p - s_j) for every point p, against the empirical law of
    `sources` in the same replica.  Shapes (..., N, d) and (..., M, d).
    """
    if field.mean_field is not None:
        return field.mean_field(points, sources)

    chunk = chunk or get_config().PAIRWISE_CHUNK
    out = np.empty(np.broadcast_shapes(points.shape[:-2], sources.shape[:-2]) + points.shape[-2:])
    n = points.shape[-2]
    # fixed chunk boundaries keep the reduction order independent of threading
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = points[..., lo:hi, None, :] - sources[..., None, :, :]
        out[..., lo:hi, :] = field.C(diff).mean(axis=-2)
    return out


def interaction_force(X: np.ndarray, i: int, field: ForceField) -> np.ndarray:
    """Empirical mean-field force on particle i of the (N, d) configuration X"""
    X = np.asarray(X, dtype=float)
    if field.mean_field is not None:
        return field.mean_field(X[i:i + 1], X)[0]
    return field.C(X[i] - X).mean(axis=0)


def _euler_update(state: ParticleState, field: ForceField, dt: float, forces: np.ndarray,
                  increments: np.ndarray) -> ParticleState:
    accel = -field.A(state.V) - field.B(state.X) - forces
    X_new = state.X + state.V * dt
    V_new = state.V + accel * dt + math.sqrt(2.0 * dt) * increments
    if not (np.all(np.isfinite(X_new)) and np.all(np.isfinite(V_new))):
        raise BlowUpError(f"non-finite state after step {state.step_index}", step_index=state.step_index)
    return ParticleState(state.t + dt, X_new, V_new, state.step_index + 1)


def _increments(state: ParticleState, noise: NoiseStream, replica_id: int,
                tag: int = StreamTag.BROWNIAN) -> np.ndarray:
    return noise.normals(state.step_index, state.N, state.dim, replica_id, state.n_replicas, tag)


def step(state: ParticleState, field: ForceField, dt: float, noise: NoiseStream,
         replica_id: int = 0) -> ParticleState:
    """One explicit Euler-Maruyama step of the interacting particle system"""
    check_stability(field, dt)
    forces = mean_field_forces(state.X, state.X, field)
    return _euler_update(state, field, dt, forces, _increments(state, noise, replica_id))


class TrajectoryRecorder:
    """Collects moments every `stride` steps; optionally keeps full snapshots"""

    def __init__(self, stride: int = 1, snapshots: bool = False):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride
        self.keep_snapshots = snapshots
        self.rows: List[dict] = []
        self.snapshots: List[ParticleState] = []
        self._last_step: Optional[int] = None

    def due(self, state: ParticleState) -> bool:
        return state.step_index % self.stride == 0 and state.step_index != self._last_step

    def record(self, state: ParticleState) -> None:
        if not self.due(state):
            return
        self._last_step = state.step_index
        row = {
            't': state.t,
            'm2_x': float(np.mean(np.sum(state.X ** 2, axis=-1))),
            'm2_v': float(np.mean(np.sum(state.V ** 2, axis=-1))),
        }
        mean_x = state.X.mean(axis=(0, 1))
        mean_v = state.V.mean(axis=(0, 1))
        for k in range(state.dim):
            row[f'mean_x_{k}'] = float(mean_x[k])
        for k in range(state.dim):
            row[f'mean_v_{k}'] = float(mean_v[k])
        self.rows.append(row)
        if self.keep_snapshots:
            self.snapshots.append(state.copy())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def advance(state: ParticleState, field: ForceField, dt: float, n_steps: int, noise: NoiseStream,
            replica_id: int = 0, recorder: Optional[TrajectoryRecorder] = None) -> ParticleState:
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps:
        check_stability(field, dt)
    if recorder is not None:
        recorder.record(state)
    for _ in range(n_steps):
        state = step(state, field, dt, noise, replica_id)
        if recorder is not None:
            recorder.record(state)
    return state


@dataclass
class CoupledPair:
    state_a: ParticleState
    state_b: ParticleState

    def __post_init__(self):
        if self.state_a.X.shape != self.state_b.X.shape:
            raise InvalidStateError(
                f"coupled states need equal shapes, got {self.state_a.X.shape} and {self.state_b.X.shape}"
            )
        if self.state_a.step_index != self.state_b.step_index:
            raise InvalidStateError("coupled states must be at the same step")

    def differences(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.state_a.X - self.state_b.X, self.state_a.V - self.state_b.V


def replica_mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    """
    Mean of an (R, N) array and its standard error, taken across replica
    means when R > 1 and across particles otherwise.
    """
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    per_replica = values.mean(axis=-1).ravel()
    samples = per_replica if per_replica.size > 1 else values.ravel()
    if samples.size < 2:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / math.sqrt(samples.size))


def _difference_row(pair: CoupledPair, qform) -> dict:
    dx, dv = pair.differences()
    q_values = qform(dx, dv)
    q_mean, q_err = replica_mean_and_stderr(q_values)
    return {
        't': pair.state_a.t,
        'x2': float(np.mean(np.sum(dx * dx, axis=-1))),
        'xv': float(np.mean(np.sum(dx * dv, axis=-1))),
        'v2': float(np.mean(np.sum(dv * dv, axis=-1))),
        'Q_diff': q_mean,
        'Q_stderr': q_err,
    }


def advance_coupled(pair: CoupledPair, field: ForceField, dt: float, n_steps: int, noise: NoiseStream,
                    qform, replica_id: int = 0, stride: int = 1) -> Tuple[CoupledPair, pd.DataFrame]:
    """
    Advance both systems with identical noise addresses and record the
    difference moments every `stride` steps.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps:
        check_stability(field, dt)
    rows = [_difference_row(pair, qform)] if pair.state_a.step_index % stride == 0 else []
    a, b = pair.state_a, pair.state_b
    for _ in range(n_steps):
        a = step(a, field, dt, noise, replica_id)
        b = step(b, field, dt, noise, replica_id)
        if a.step_index % stride == 0:
            rows.append(_difference_row(CoupledPair(a, b), qform))
    return CoupledPair(a, b), pd.DataFrame(rows)


def _generator(alpha: float, stiffness: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-stiffness, -alpha]])


def _affine_generator(alpha: float, stiffness: float) -> np.ndarray:
    """Generator acting on (m_x, m_v, offset); the offset row is constant"""
    generator = np.zeros((3, 3))
    generator[:2, :2] = _generator(alpha, stiffness)
    generator[1, 2] = -1.0
    return generator


@dataclass(frozen=True)
class LinearMeanPath:
    """
    Mean of the nonlinear process for the linear field:
    m_x' = m_v,  m_v' = -alpha m_v - beta m_x - offset.
    The interaction gamma (x - m_x) has zero mean and drops out.
    """
    alpha: float
    stiffness: float
    mx0: np.ndarray
    mv0: np.ndarray
    t0: float = 0.0
    offset: np.ndarray = 0.0

    @classmethod
    def for_field(cls, field: ForceField, law: InitialLaw) -> 'LinearMeanPath':
        if not field.is_linear:
            raise InvalidCoefficientsError("the mean path reduction needs the linear field")
        mx, mv = law.means(field.coeffs.dim)
        return cls(field.coeffs.alpha, field.confinement, mx, mv, offset=field.offset())

    @property
    def _initial(self) -> np.ndarray:
        mx, mv = np.atleast_1d(self.mx0), np.atleast_1d(self.mv0)
        return np.vstack([mx, mv, np.broadcast_to(self.offset, mx.shape)])

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Closed-form (m_x, m_v) at time t"""
        propagator = linalg.expm(_affine_generator(self.alpha, self.stiffness) * (t - self.t0))
        m = propagator @ self._initial
        return m[0], m[1]

    def discrete(self, step_index: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """Means of the Euler-discretized process after step_index steps"""
        one_step = np.eye(3) + _affine_generator(self.alpha, self.stiffness) * dt
        m = np.linalg.matrix_power(one_step, int(step_index)) @ self._initial
        return m[0], m[1]


class MeanScheme(Enum):
    EULER = "euler"
    EXACT = "exact"


def advance_mckean_linear(points: ParticleState, mean_path: LinearMeanPath, field: ForceField,
                          dt: float, n_steps: int, noise: NoiseStream, replica_id: int = 0,
                          recorder: Optional[TrajectoryRecorder] = None,
                          mean_scheme=MeanScheme.EULER) -> ParticleState:
    """
    Independent copies of the nonlinear process for the linear field, driven
    by the same noise addresses as a particle system with the same N.
    With the euler scheme the mean is the exact mean of the discretized process.
    """
    if not field.is_linear:
        raise InvalidCoefficientsError("advance_mckean_linear called with a nonlinear field")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps:
        check_stability(field, dt)
    mean_scheme = MeanScheme(mean_scheme)
    gamma = field.coeffs.gamma
    if recorder is not None:
        recorder.record(points)
    for _ in range(n_steps):
        if mean_scheme is MeanScheme.EULER:
            m_x, _ = mean_path.discrete(points.step_index, dt)
        else:
            m_x, _ = mean_path.at(points.t)
        forces = gamma * (points.X - m_x)
        points = _euler_update(points, field, dt, forces, _increments(points, noise, replica_id))
        if recorder is not None:
            recorder.record(points)
    return points


@dataclass
class ProxyResult:
    cloud: ParticleState
    tracked: Optional[ParticleState]
    error_budget: float


def advance_mckean_proxy(cloud: ParticleState, field: ForceField, dt: float, n_steps: int,
                         noise: NoiseStream, replica_id: int = 0,
                         tracked: Optional[ParticleState] = None,
                         tag: int = StreamTag.PROXY) -> ProxyResult:
    """
    Evolve an auxiliary M-particle cloud standing in for the nonlinear law.
    `tracked` copies feel the cloud's empirical force and use the Brownian
    stream, so they couple with a particle system of the same N.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps:
        check_stability(field, dt)
    if tracked is not None and tracked.n_replicas != cloud.n_replicas:
        raise InvalidStateError("tracked copies and proxy cloud need the same replica count")
    for _ in range(n_steps):
        cloud_forces = mean_field_forces(cloud.X, cloud.X, field)
        if tracked is not None:
            tracked_forces = mean_field_forces(tracked.X, cloud.X, field)
            tracked = _euler_update(tracked, field, dt, tracked_forces, _increments(tracked, noise, replica_id))
        cloud = _euler_update(cloud, field, dt, cloud_forces, _increments(cloud, noise, replica_id, tag))
    return ProxyResult(cloud=cloud, tracked=tracked, error_budget=1.0 / math.sqrt(cloud.N))


def linear_difference_oracle(field: ForceField, dx0: np.ndarray, dv0: np.ndarray, n_steps: int,
                             dt: float, scheme=MeanScheme.EULER) -> Tuple[np.ndarray, np.ndarray]:
    """
    Difference of two synchronously coupled linear particle systems after
    n_steps.  Noise and the constant offset cancel; the particle mean of the
    difference feels beta and the centred part beta + gamma.
    """
    if not field.is_linear:
        raise InvalidCoefficientsError("the difference oracle needs the linear field")
    scheme = MeanScheme(scheme)
    dx0 = np.asarray(dx0, dtype=float)
    dv0 = np.asarray(dv0, dtype=float)
    alpha, k = field.coeffs.alpha, field.confinement

    def propagator(stiffness: float) -> np.ndarray:
        generator = _generator(alpha, stiffness)
        if scheme is MeanScheme.EULER:
            return np.linalg.matrix_power(np.eye(2) + generator * dt, int(n_steps))
        return linalg.expm(generator * dt * n_steps)

    def apply(P: np.ndarray, x: np.ndarray, v: np.ndarray):
        return P[0, 0] * x + P[0, 1] * v, P[1, 0] * x + P[1, 1] * v

    mx = dx0.mean(axis=-2, keepdims=True)
    mv = dv0.mean(axis=-2, keepdims=True)
    cx, cv = apply(propagator(k + field.coeffs.gamma), dx0 - mx, dv0 - mv)
    mx, mv = apply(propagator(k), mx, mv)
    return cx + mx, cv + mv


def stationary_covariance(alpha: float, stiffness: float) -> np.ndarray:
    """
    Per-coordinate stationary covariance of (x, v) for dx = v dt,
    dv = -(alpha v + stiffness x) dt + sqrt(2) dW, from J P + P J^T + S = 0.
    """
    if not (alpha > 0 and stiffness > 0):
        raise InvalidCoefficientsError("a stationary law needs alpha > 0 and a positive confinement")
    diffusion = np.diag([0.0, 2.0])
    return linalg.solve_continuous_lyapunov(_generator(alpha, stiffness), -diffusion)
