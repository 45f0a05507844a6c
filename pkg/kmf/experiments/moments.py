"""
Uniform-in-time second moment of the particle system
"""

import logging

import numpy as np

from kmf.dynamics import InitialLaw, LawKind, TrajectoryRecorder, advance, stationary_covariance
from kmf.experiments.common import ExperimentConfig, ExperimentResult, Verdict, linear_fit
from kmf.rates import SearchMode, Variant, contraction_rate, moment_bound

logger = logging.getLogger('kmf.experiments')

DEFAULTS = {'N': 10000, 'dt': 1e-3, 'T': 50.0, 'replicas': 1, 'stride': 100}

TAIL_START = 0.5
SLOPE_TOLERANCE = 0.01
PLATEAU_TOLERANCE = 0.05


def run_moment_bound(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Track E(|x|^2 + |v|^2) on [0, T]; the tail [T/2, T] must be flat and the
    plateau must stay under the uniform bound.
    """
    field = cfg.field()
    report = contraction_rate(cfg.coeffs, variant=Variant.DOUBLED_ALPHA, search_mode=SearchMode.FIXED_EPS)
    law = cfg.law('initial', InitialLaw(LawKind.DIRAC, 0.0, 0.0))
    noise = cfg.noise()

    state = law.sample(noise, cfg.N, cfg.coeffs.dim, 0, cfg.replicas)
    initial_q = float(np.mean(report.qform(state.X, state.V)))
    recorder = TrajectoryRecorder(stride=cfg.stride)
    logger.info("Moments: N=%d, R=%d, T=%g, %s field", cfg.N, cfg.replicas, cfg.T, field.kind.value)
    advance(state, field, cfg.dt, cfg.n_steps, noise, 0, recorder)

    series = recorder.to_frame()
    series['m2'] = series['m2_x'] + series['m2_v']
    series['running_max'] = series['m2'].cummax()

    tail = series[series['t'] >= TAIL_START * cfg.T]
    plateau = float(tail['m2'].mean())
    fit = linear_fit(tail['t'], tail['m2'], (float(tail['t'].iloc[0]), float(tail['t'].iloc[-1])))
    relative_slope = fit.slope / plateau
    running_max = float(series['m2'].max())
    argmax_time = float(series['t'].iloc[int(series['m2'].to_numpy().argmax())])
    bound = moment_bound(cfg.coeffs, initial_q=initial_q, offset=float(np.linalg.norm(field.offset())))

    logger.info("Plateau %.5g, relative tail slope %.3g, running max %.5g at t=%.3g, bound %.5g",
                plateau, relative_slope, running_max, argmax_time, bound)

    verdicts = [
        Verdict('moment_tail_slope', 0.0, relative_slope, SLOPE_TOLERANCE, abs(relative_slope) <= SLOPE_TOLERANCE),
        Verdict('moment_uniform_bound', bound, running_max, bound, running_max <= bound),
        Verdict('moment_argmax_time', None, argmax_time, None, None),
    ]
    if field.is_linear and cfg.coeffs.gamma == 0:
        covariance = stationary_covariance(cfg.coeffs.alpha, field.confinement)
        theory = cfg.coeffs.dim * float(covariance[0, 0] + covariance[1, 1])
        verdicts.append(Verdict('moment_plateau', theory, plateau, PLATEAU_TOLERANCE,
                                abs(plateau / theory - 1.0) <= PLATEAU_TOLERANCE))

    return ExperimentResult(
        name='moments',
        series=series,
        verdicts=verdicts,
        fit=fit,
        extras={'plateau': plateau, 'running_max': running_max, 'bound': bound, 'argmax_time': argmax_time},
    )
