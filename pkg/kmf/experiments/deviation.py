"""
Gaussian deviation of empirical averages of Lipschitz observables
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from kmf.dynamics import InitialLaw, LawKind, ParticleState, advance
from kmf.errors import ExperimentError
from kmf.experiments.common import (
    ExperimentConfig,
    ExperimentResult,
    Verdict,
    linear_fit,
    replica_batches,
    run_parallel,
)
from kmf.rates import contraction_rate

logger = logging.getLogger('kmf.experiments')

DEFAULTS = {'N': 64, 'dt': 1e-2, 'T': 10.0, 'replicas': 10000, 'stride': 100}

VARIANCE_RATIO = (2.0, 0.3)
SLOPE_RATIO = (2.0, 0.5)


@dataclass(frozen=True)
class Observable:
    """h(x, v) evaluated over the last axis; stored already divided by its Lipschitz constant"""
    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float = 1.0

    def __call__(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        return self.fn(X, V) / self.lipschitz


OBSERVABLES: Dict[str, Observable] = {
    'x1': Observable('x1', lambda X, V: X[..., 0]),
    'norm': Observable('norm', lambda X, V: np.sqrt(1.0 + np.sum(X * X + V * V, axis=-1)) - 1.0),
}


def register_observable(name: str, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                        lipschitz: float) -> Observable:
    """Add a user observable; it is rescaled to be 1-Lipschitz"""
    if not lipschitz > 0:
        raise ValueError("lipschitz constant must be positive")
    observable = Observable(name, fn, float(lipschitz))
    OBSERVABLES[name] = observable
    return observable


def get_observable(name: str) -> Observable:
    try:
        return OBSERVABLES[name]
    except KeyError:
        raise ExperimentError(f"unknown observable '{name}' (known: {', '.join(sorted(OBSERVABLES))})")


def empirical_averages(cfg: ExperimentConfig, N: int, T_steps: int, law: InitialLaw,
                       observable: Observable, replica_offset: int = 0) -> np.ndarray:
    """
    S = (1/N) sum_i h(X_i, V_i) at the horizon, one value per replica.
    Replicas use the noise lanes replica_offset .. replica_offset + R - 1.
    """
    field = cfg.field()
    noise = cfg.noise()

    def run_batch(start: int, count: int) -> np.ndarray:
        lane = replica_offset + start
        state = law.sample(noise, N, cfg.coeffs.dim, lane, count)
        state = advance(state, field, cfg.dt, T_steps, noise, replica_id=lane)
        return observable(state.X, state.V).mean(axis=-1)

    return np.concatenate(run_parallel(run_batch, replica_batches(cfg.replicas)))


def reference_value(cfg: ExperimentConfig, law: InitialLaw, observable: Observable, lane: int):
    """Long single-run estimate of the stationary mean of h and its Monte Carlo error"""
    n_ref = int(cfg.knob('reference_N', 10000))
    t_ref = float(cfg.knob('reference_T', 50.0))
    state = law.sample(cfg.noise(), n_ref, cfg.coeffs.dim, lane, 1)
    state = advance(state, cfg.field(), cfg.dt, int(round(t_ref / cfg.dt)), cfg.noise(), replica_id=lane)
    values = observable(state.X[0], state.V[0])
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_ref))


@dataclass
class TailFit:
    N: int
    mean: float
    variance: float
    slope: float
    d_hat: float
    median_exceedance: float
    table: pd.DataFrame


def tail_fit(S: np.ndarray, N: int, radii: np.ndarray, min_count: int) -> TailFit:
    """Regress log P(S - E S >= r) on r^2 over radii with enough exceedances"""
    centred = S - S.mean()
    counts = np.array([(centred >= r).sum() for r in radii])
    probabilities = counts / S.size
    usable = counts >= min_count
    table = pd.DataFrame({'N': N, 'r': radii, 'count': counts, 'exceedance': probabilities,
                          'used': usable})
    if usable.sum() < 3:
        raise ExperimentError(
            f"too few replicas for the requested radii at N={N}: "
            f"{int(usable.sum())} radii have at least {min_count} exceedances"
        )
    fit = linear_fit(radii[usable] ** 2, np.log(probabilities[usable]), (float(radii[usable][0]), float(radii[usable][-1])))
    slope = fit.slope
    d_hat = -N / (2.0 * slope) if slope < 0 else math.inf
    return TailFit(N=N, mean=float(S.mean()), variance=float(S.var(ddof=1)), slope=slope, d_hat=d_hat,
                   median_exceedance=float((centred >= 0).mean()), table=table)


def _ratio_verdicts(fits: List[TailFit]) -> List[Verdict]:
    verdicts = []
    for small, large in zip(fits, fits[1:]):
        if large.N != 2 * small.N:
            continue
        var_ratio = small.variance / large.variance
        slope_ratio = large.slope / small.slope
        target, tolerance = VARIANCE_RATIO
        verdicts.append(Verdict(f'deviation_variance_ratio[N={small.N}]', target, var_ratio, tolerance,
                                abs(var_ratio - target) <= tolerance))
        target, tolerance = SLOPE_RATIO
        verdicts.append(Verdict(f'deviation_tail_slope_ratio[N={small.N}]', target, slope_ratio, tolerance,
                                abs(slope_ratio - target) <= tolerance))
    return verdicts


def run_deviation(cfg: ExperimentConfig) -> ExperimentResult:
    """
    R replicas of the N-particle system from a Dirac start; checks that Var(S)
    and the sub-Gaussian tail exponent scale like 1/N and N.
    """
    contraction_rate(cfg.coeffs)
    law = cfg.law('initial', InitialLaw(LawKind.DIRAC, 1.0, 0.0))
    if law.kind is not LawKind.DIRAC:
        raise ExperimentError("the deviation experiment starts from deterministic points (dirac law)")
    observable = get_observable(cfg.knob('observable', 'x1'))
    ladder = sorted(int(n) for n in cfg.knob('n_ladder', [64, 128, 256]))
    min_count = int(cfg.knob('min_tail_count', 25))

    logger.info("Deviation: h=%s, N ladder %s, R=%d, T=%g", observable.name, ladder, cfg.replicas, cfg.T)

    # each rung, the reference run and the centering reruns read their own noise lanes
    lanes = {N: index * cfg.replicas for index, N in enumerate(ladder)}
    free_lane = len(ladder) * cfg.replicas
    samples = {N: empirical_averages(cfg, N, cfg.n_steps, law, observable, lanes[N]) for N in ladder}
    radii: Optional[List[float]] = cfg.knob('radii')
    if radii is None:
        scale = float(samples[ladder[0]].std(ddof=1))
        radii = list(np.linspace(0.25, 3.0, 12) * scale)
    radii = np.sort(np.asarray(radii, dtype=float))

    fits = [tail_fit(samples[N], N, radii, min_count) for N in ladder]
    mu_ref, mu_err = reference_value(cfg, law, observable, free_lane)
    for fit in fits:
        logger.info("N=%d: Var(S)=%.4g, tail slope %.4g, D_hat %.4g, offset %.3g",
                    fit.N, fit.variance, fit.slope, fit.d_hat, abs(fit.mean - mu_ref))

    verdicts = _ratio_verdicts(fits)
    for fit in fits:
        verdicts.append(Verdict(f'deviation_median_exceedance[N={fit.N}]', 0.5, fit.median_exceedance,
                                None, None))
    verdicts.append(Verdict('deviation_reference_mean', None, mu_ref, mu_err, None))

    if cfg.knob('check_centering', False):
        verdicts.extend(_centering_verdicts(cfg, law, observable, ladder[0], mu_ref, samples[ladder[0]],
                                             free_lane + 1))

    summary = {fit.N: {'mean': fit.mean, 'variance': fit.variance, 'slope': fit.slope, 'd_hat': fit.d_hat,
                       'offset': abs(fit.mean - mu_ref)} for fit in fits}
    series = pd.concat([fit.table for fit in fits], ignore_index=True)
    series['mean_S'] = series['N'].map(lambda n: summary[n]['mean'])
    series['var_S'] = series['N'].map(lambda n: summary[n]['variance'])
    series['tail_slope'] = series['N'].map(lambda n: summary[n]['slope'])
    return ExperimentResult(
        name='deviation',
        series=series,
        verdicts=verdicts,
        extras={'summary': summary, 'mu_ref': mu_ref, 'mu_ref_stderr': mu_err},
    )


def _centering_verdicts(cfg: ExperimentConfig, law: InitialLaw, observable: Observable, N: int,
                        mu_ref: float, base: np.ndarray, lane: int) -> List[Verdict]:
    """Offset |E S - mu_ref| should shrink when T doubles and when N quadruples"""
    offset = abs(float(base.mean()) - mu_ref)
    longer_run = empirical_averages(cfg, N, 2 * cfg.n_steps, law, observable, lane)
    larger_run = empirical_averages(cfg, 4 * N, cfg.n_steps, law, observable, lane + cfg.replicas)
    longer = abs(float(longer_run.mean()) - mu_ref)
    larger = abs(float(larger_run.mean()) - mu_ref)
    return [
        Verdict(f'deviation_offset_T_doubled[N={N}]', offset, longer, offset, longer <= offset),
        Verdict(f'deviation_offset_N_quadrupled[N={N}]', offset, larger, offset, larger <= offset),
    ]
