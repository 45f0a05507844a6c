"""
Exponential contraction of synchronously coupled particle systems
"""

import logging
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from kmf.dynamics import (
    CoupledPair,
    InitialLaw,
    LawKind,
    advance_coupled,
    linear_difference_oracle,
    replica_mean_and_stderr,
)
from kmf.experiments.common import (
    ExperimentConfig,
    ExperimentResult,
    FitResult,
    Verdict,
    fit_loglinear,
    replica_batches,
    run_parallel,
)
from kmf.noise import StreamTag
from kmf.rates import QForm, report_for_field
from kmf.transport import GroundMetric, PointCloud, QDistanceEstimate, coupled_qdistance, w2_exact

logger = logging.getLogger('kmf.experiments')

DEFAULTS = {'N': 256, 'dt': 1e-3, 'T': 20.0, 'replicas': 16, 'stride': 100}

RATE_FACTOR = 0.8
MIN_R_SQUARED = 0.98
FIT_WINDOW = (0.2, 0.8)
OT_SAMPLE = 128
OT_REPLICAS = 4


def _combine_batches(frames: List[pd.DataFrame], counts: List[int]) -> pd.DataFrame:
    """Replica-weighted mean of per-batch difference records"""
    total = float(sum(counts))
    weights = [c / total for c in counts]
    combined = frames[0][['t']].copy()
    for column in ('x2', 'xv', 'v2', 'Q_diff'):
        combined[column] = sum(w * f[column].to_numpy() for w, f in zip(weights, frames))
    combined['Q_stderr'] = np.sqrt(sum((w * f['Q_stderr'].to_numpy()) ** 2 for w, f in zip(weights, frames)))
    return combined


def _simulate(cfg: ExperimentConfig, N: int, qform: QForm, law_a: InitialLaw,
              law_b: InitialLaw) -> Tuple[pd.DataFrame, np.ndarray, List[CoupledPair]]:
    field = cfg.field()
    noise = cfg.noise()
    tag_b = StreamTag.INITIAL if law_b == law_a else StreamTag.INITIAL_ALT
    batches = replica_batches(cfg.replicas)

    def run_batch(start: int, count: int):
        a = law_a.sample(noise, N, cfg.coeffs.dim, start, count, StreamTag.INITIAL)
        b = law_b.sample(noise, N, cfg.coeffs.dim, start, count, tag_b)
        pair = CoupledPair(a, b)
        dx0, dv0 = pair.differences()
        final, frame = advance_coupled(pair, field, cfg.dt, cfg.n_steps, noise, qform,
                                       replica_id=start, stride=cfg.stride)
        oracle = np.full(len(frame), np.nan)
        if field.is_linear:
            for row, step_index in enumerate(range(0, cfg.n_steps + 1, cfg.stride)):
                dx, dv = linear_difference_oracle(field, dx0, dv0, step_index, cfg.dt)
                oracle[row] = replica_mean_and_stderr(qform(dx, dv))[0] * count
        return frame, oracle, final

    results = run_parallel(run_batch, batches)
    counts = [count for _, count in batches]
    frames = [frame for frame, _, _ in results]
    oracle = sum(o for _, o, _ in results) / float(sum(counts))
    return _combine_batches(frames, counts), oracle, [pair for _, _, pair in results]


def _transport_check(pairs: List[CoupledPair], qform: QForm, sample: int,
                     max_replicas: int) -> Tuple[float, float]:
    """
    Mean exact W2^2 under the Q ground cost against the mean Q of the
    synchronous pairing, both over the first `sample` particles of the
    first `max_replicas` replicas.  The pairing is one admissible plan, so
    the first value never exceeds the second.
    """
    metric = GroundMetric.from_qform(qform)
    transported, paired = [], []
    for pair in pairs:
        dx, dv = pair.differences()
        for r in range(pair.state_a.n_replicas):
            if len(transported) >= max_replicas:
                break
            a = PointCloud(PointCloud.from_state(pair.state_a, r).points[:sample])
            b = PointCloud(PointCloud.from_state(pair.state_b, r).points[:sample])
            w2, _ = w2_exact(a, b, metric)
            transported.append(w2 ** 2)
            paired.append(float(np.mean(qform(dx[r, :sample], dv[r, :sample]))))
    return float(np.mean(transported)), float(np.mean(paired))


def run_contraction(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Couple two particle systems started from different laws, fit the decay
    rate of E Q(difference) on [0.2 T, 0.8 T] and compare with the rate bound.
    """
    field = cfg.field()
    report = report_for_field(field)
    qform = report.qform
    law_a = cfg.law('initial_a', InitialLaw(LawKind.GAUSSIAN, 0.0, 0.0, 1.0))
    law_b = cfg.law('initial_b', InitialLaw(LawKind.GAUSSIAN, 0.0, 0.0, 2.0))
    ladder = list(cfg.knob('n_ladder', [cfg.N]))
    start, stop = FIT_WINDOW[0] * cfg.T, FIT_WINDOW[1] * cfg.T
    threshold = RATE_FACTOR * report.rate_C

    logger.info("Contraction: %s field, eta=%g, theory rate %.6g (b=%.4g), N ladder %s",
                field.kind.value, report.eta, report.rate_C, report.b_star, ladder)

    frames = []
    verdicts: List[Verdict] = []
    fits: Dict[int, FitResult] = {}
    terminals: Dict[int, QDistanceEstimate] = {}
    ot_sample = int(cfg.knob('ot_sample', OT_SAMPLE))
    ot_replicas = int(cfg.knob('ot_replicas', OT_REPLICAS))
    for N in ladder:
        series, oracle, pairs = _simulate(cfg, N, qform, law_a, law_b)
        series.insert(0, 'N', N)
        fit = fit_loglinear(series['t'], series['Q_diff'], start, stop)
        fits[N] = fit
        label = 'contraction' if len(ladder) == 1 else f'contraction[N={N}]'

        if fit.status != 'ok':
            logger.info("%s: fit skipped (%s)", label, fit.status)
            verdicts.append(Verdict(label, report.rate_C, None, threshold, None))
        else:
            passed = fit.rate >= threshold and fit.r_squared >= MIN_R_SQUARED
            logger.info("%s: fitted rate %.6g +/- %.2g, R^2 %.4f", label, fit.rate, fit.half_width, fit.r_squared)
            verdicts.append(Verdict(label, report.rate_C, fit.rate, threshold, passed))
            verdicts.append(Verdict(f'{label}_r_squared', None, fit.r_squared, MIN_R_SQUARED,
                                    fit.r_squared >= MIN_R_SQUARED))

        if field.is_linear:
            series['Q_oracle'] = oracle
            oracle_fit = fit_loglinear(series['t'], oracle, start, stop)
            if fit.status == 'ok' and oracle_fit.status == 'ok':
                slack = max(fit.half_width, 1e-9 * abs(oracle_fit.rate))
                verdicts.append(Verdict(f'{label}_oracle', oracle_fit.rate, fit.rate, slack,
                                        abs(fit.rate - oracle_fit.rate) <= slack))

        terminal = coupled_qdistance(pairs, qform)
        terminals[N] = terminal
        logger.info("%s: terminal coupled d_Q^2 %.6g +/- %.2g", label, terminal.value, terminal.stderr)
        verdicts.append(Verdict(f'{label}_terminal_dq', None, terminal.value, terminal.stderr, None))

        transported, paired = _transport_check(pairs, qform, min(N, ot_sample), ot_replicas)
        slack = terminal.stderr + 1e-9 * abs(paired)
        logger.info("%s: exact W2^2 %.6g against paired Q %.6g", label, transported, paired)
        verdicts.append(Verdict(f'{label}_ot_check', paired, transported, slack, transported <= paired + slack))
        frames.append(series)

    rates = [fits[N].rate for N in ladder if fits[N].status == 'ok']
    if len(rates) > 1:
        spread = float(np.max(rates) - np.min(rates))
        logger.info("Contraction rate spread across N: %.3g", spread)
        verdicts.append(Verdict('contraction_N_spread', 0.0, spread, None, None))

    return ExperimentResult(
        name='contraction',
        series=pd.concat(frames, ignore_index=True),
        verdicts=verdicts,
        fit=fits[ladder[0]],
        extras={
            'report': report.to_row(),
            'fits': {N: f.to_dict() for N, f in fits.items()},
            'terminal_dq': {N: (q.value, q.stderr) for N, q in terminals.items()},
        },
    )
