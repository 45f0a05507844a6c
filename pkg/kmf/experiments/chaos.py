"""
Time-uniform propagation of chaos: particle system vs. nonlinear copies
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
import pandas as pd

from kmf.dynamics import (
    InitialLaw,
    LawKind,
    LinearMeanPath,
    MeanScheme,
    ParticleState,
    advance_mckean_linear,
    advance_mckean_proxy,
    step,
)
from kmf.errors import ExperimentError
from kmf.experiments.common import (
    ExperimentConfig,
    ExperimentResult,
    Verdict,
    degenerate_fit,
    linear_fit,
    replica_batches,
    run_parallel,
)
from kmf.noise import StreamTag
from kmf.rates import Variant, chaos_constant, contraction_rate

logger = logging.getLogger('kmf.experiments')

DEFAULTS = {'N': 64, 'dt': 1e-3, 'T': 10.0, 'replicas': 64, 'stride': 50}

SLOPE_TARGET = -1.0
SLOPE_TOLERANCE = 0.3
UNIFORMITY_SIGMAS = 3.0


@dataclass
class ErrorTrace:
    t: np.ndarray
    errors: np.ndarray  # (records, replicas) mean squared coupling error
    copy_m2x: np.ndarray  # (records,) E|X_bar|^2 of the nonlinear copies

    @property
    def mean(self) -> np.ndarray:
        return self.errors.mean(axis=1)

    def sup(self, horizon: float = math.inf):
        mask = self.t <= horizon + 1e-12
        series = self.mean[mask]
        index = int(np.argmax(series))
        spread = self.errors[mask][index]
        stderr = float(spread.std(ddof=1) / math.sqrt(spread.size)) if spread.size > 1 else 0.0
        return float(series[index]), float(self.t[mask][index]), stderr


def _resolve_mode(cfg: ExperimentConfig, linear: bool) -> str:
    mode = cfg.knob('mode', 'auto')
    if mode == 'auto':
        return 'exact' if linear else 'proxy'
    if mode == 'exact' and not linear:
        raise ExperimentError("exact chaos mode needs the linear field; use mode=proxy")
    return mode


def _trace(cfg: ExperimentConfig, N: int, n_steps: int, law: InitialLaw, mode: str) -> ErrorTrace:
    field = cfg.field()
    noise = cfg.noise()
    d = cfg.coeffs.dim
    proxy_m = int(cfg.knob('proxy_m', 0)) or 10 * N
    mean_path = LinearMeanPath.for_field(field, law) if mode == 'exact' else None
    scheme = MeanScheme(cfg.knob('mean_scheme', 'euler'))

    def run_batch(start: int, count: int):
        particles = law.sample(noise, N, d, start, count)
        copies = particles.copy()
        cloud = None
        if mode == 'proxy':
            cloud = law.sample(noise, proxy_m, d, start, count, StreamTag.PROXY_INITIAL)
        rows, errors, m2x = [], [], []

        def record(p: ParticleState, q: ParticleState):
            diff = np.sum((p.X - q.X) ** 2 + (p.V - q.V) ** 2, axis=-1)
            rows.append(p.t)
            errors.append(diff.mean(axis=-1))
            m2x.append(float(np.mean(np.sum(q.X ** 2, axis=-1))))

        record(particles, copies)
        for k in range(1, n_steps + 1):
            next_particles = step(particles, field, cfg.dt, noise, start)
            if mode == 'exact':
                copies = advance_mckean_linear(copies, mean_path, field, cfg.dt, 1, noise, start,
                                               mean_scheme=scheme)
            else:
                result = advance_mckean_proxy(cloud, field, cfg.dt, 1, noise, start, tracked=copies)
                cloud, copies = result.cloud, result.tracked
            particles = next_particles
            if k % cfg.stride == 0:
                record(particles, copies)
        return np.array(rows), np.array(errors), np.array(m2x)

    batches = replica_batches(cfg.replicas)
    results = run_parallel(run_batch, batches)
    t = results[0][0]
    errors = np.concatenate([e for _, e, _ in results], axis=1)
    weights = np.array([count for _, count in batches], dtype=float) / cfg.replicas
    copy_m2x = sum(w * m for w, (_, _, m) in zip(weights, results))
    return ErrorTrace(t=t, errors=errors, copy_m2x=copy_m2x)


def run_chaos(cfg: ExperimentConfig) -> ExperimentResult:
    """
    For each N, couple the particle system with N nonlinear copies sharing
    initial points and noise; fit log sup_t E|error|^2 against log N.
    """
    field = cfg.field()
    contraction_rate(cfg.coeffs, variant=Variant.DOUBLED_ALPHA)
    ladder = sorted(int(n) for n in cfg.knob('n_ladder', [16, 32, 64, 128, 256, 512]))
    law = cfg.law('initial', InitialLaw(LawKind.GAUSSIAN, 1.0, 0.0, 1.0))
    mode = _resolve_mode(cfg, field.is_linear)
    check_uniformity = bool(cfg.knob('check_time_uniformity', True))

    logger.info("Chaos: %s mode, N ladder %s, R=%d, T=%g", mode, ladder, cfg.replicas, cfg.T)

    sups: Dict[int, tuple] = {}
    frames: List[pd.DataFrame] = []
    uniformity = None
    copy_m2x = 0.0
    for index, N in enumerate(ladder):
        doubled = check_uniformity and index == 0
        trace = _trace(cfg, N, cfg.n_steps * (2 if doubled else 1), law, mode)
        sups[N] = trace.sup(cfg.T)
        copy_m2x = max(copy_m2x, float(trace.copy_m2x.max()))
        if doubled:
            uniformity = (N, sups[N], trace.sup())
        frames.append(pd.DataFrame({'N': N, 't': trace.t, 'mean_sq_error': trace.mean,
                                    'copy_m2_x': trace.copy_m2x}))
        logger.info("N=%d: sup error %.4g at t=%.3g", N, sups[N][0], sups[N][1])

    values = np.array([sups[N][0] for N in ladder])
    verdicts: List[Verdict] = []
    if np.all(values == 0):
        fit = degenerate_fit((float(ladder[0]), float(ladder[-1])), "zero error")
        verdicts.append(Verdict('chaos_zero_error', 0.0, float(values.max()), 0.0, True))
    elif np.any(values <= 0):
        raise ExperimentError("coupling error vanished for some N but not all")
    else:
        fit = linear_fit(np.log(ladder), np.log(values), (float(ladder[0]), float(ladder[-1])))
        verdicts.append(Verdict('chaos_slope', SLOPE_TARGET, fit.slope, SLOPE_TOLERANCE,
                                abs(fit.slope - SLOPE_TARGET) <= SLOPE_TOLERANCE))
        prefactor = math.exp(fit.intercept)
        theory = chaos_constant(cfg.coeffs, copy_m2x)
        verdicts.append(Verdict('chaos_prefactor', theory, prefactor, theory, None))
        logger.info("Chaos slope %.4f +/- %.3f, prefactor %.4g (bound %.4g)",
                    fit.slope, fit.half_width, prefactor, theory)

    if uniformity is not None:
        N, (sup_t, _, _), (sup_2t, _, stderr) = uniformity
        allowed = UNIFORMITY_SIGMAS * stderr
        verdicts.append(Verdict(f'chaos_time_uniformity[N={N}]', sup_t, sup_2t,
                                sup_t + allowed, sup_2t - sup_t <= allowed))

    return ExperimentResult(
        name='chaos',
        series=pd.concat(frames, ignore_index=True),
        verdicts=verdicts,
        fit=fit,
        extras={'sup_errors': {N: sups[N][0] for N in ladder}, 'mode': mode},
    )
