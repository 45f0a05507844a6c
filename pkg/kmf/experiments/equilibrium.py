"""
Convergence of far-apart particle systems to the same stationary law
"""

import logging

import numpy as np
import pandas as pd

from kmf.dynamics import InitialLaw, LawKind, TrajectoryRecorder, advance, stationary_covariance
from kmf.experiments.common import ExperimentConfig, ExperimentResult, Verdict, run_parallel
from kmf.rates import contraction_rate
from kmf.transport import PointCloud, w2_exact

logger = logging.getLogger('kmf.experiments')

DEFAULTS = {'N': 10000, 'dt': 1e-3, 'T': 20.0, 'replicas': 1, 'stride': 100}

VARIANCE_TOLERANCE = 0.05
FLOOR_FACTOR = 2.0


def run_equilibrium(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Systems A and B start from distinct laws; C starts from A's law with
    independent noise and gives the sampling floor of the terminal distance.
    """
    field = cfg.field()
    contraction_rate(cfg.coeffs)
    noise = cfg.noise()
    d = cfg.coeffs.dim
    law_a = cfg.law('initial_a', InitialLaw(LawKind.DIRAC, 5.0, 0.0))
    law_b = cfg.law('initial_b', InitialLaw(LawKind.DIRAC, -5.0, 0.0))
    ot_sample = min(int(cfg.knob('ot_sample', 2048)), cfg.N)

    def run_system(law: InitialLaw, replica_id: int):
        state = law.sample(noise, cfg.N, d, replica_id, 1)
        recorder = TrajectoryRecorder(stride=cfg.stride)
        return advance(state, field, cfg.dt, cfg.n_steps, noise, replica_id, recorder), recorder.to_frame()

    logger.info("Equilibrium: N=%d, T=%g, %s field", cfg.N, cfg.T, field.kind.value)
    (a, frame_a), (b, frame_b), (c, _) = run_parallel(run_system, [(law_a, 0), (law_b, 1), (law_a, 2)])

    def cloud(state) -> PointCloud:
        return PointCloud(np.hstack([state.X[0, :ot_sample], state.V[0, :ot_sample]]))

    cross, _ = w2_exact(cloud(a), cloud(b))
    floor, _ = w2_exact(cloud(a), cloud(c))
    logger.info("Terminal W2: cross %.4g, sampling floor %.4g", cross, floor)

    verdicts = [Verdict('equilibrium_cross_w2', floor, cross, FLOOR_FACTOR * floor, cross <= FLOOR_FACTOR * floor)]
    extras = {'cross_w2': cross, 'floor_w2': floor, 'ot_sample': ot_sample}

    if field.is_linear and cfg.coeffs.gamma == 0:
        covariance = stationary_covariance(cfg.coeffs.alpha, field.confinement)
        var_x = float(np.mean(np.var(a.X[0], axis=0, ddof=1)))
        var_v = float(np.mean(np.var(a.V[0], axis=0, ddof=1)))
        for label, theory, measured in (('equilibrium_var_x', covariance[0, 0], var_x),
                                        ('equilibrium_var_v', covariance[1, 1], var_v)):
            error = abs(measured / theory - 1.0)
            verdicts.append(Verdict(label, float(theory), measured, VARIANCE_TOLERANCE,
                                    error <= VARIANCE_TOLERANCE))
        extras.update(var_x=var_x, var_v=var_v)
        logger.info("Terminal variances: Var(X)=%.4g Var(V)=%.4g (theory %.4g, %.4g)",
                    var_x, var_v, covariance[0, 0], covariance[1, 1])

    frame_a.insert(0, 'system', 'a')
    frame_b.insert(0, 'system', 'b')
    return ExperimentResult(
        name='equilibrium',
        series=pd.concat([frame_a, frame_b], ignore_index=True),
        verdicts=verdicts,
        extras=extras,
    )
