import math

import numpy as np
import pandas as pd
import pytest

from kmf.config import TestingConfig
from kmf.dynamics import InitialLaw, LawKind
from kmf.errors import ExperimentError
from kmf.experiments import (
    ExperimentConfig,
    ExperimentResult,
    Verdict,
    register_observable,
    run_chaos,
    run_contraction,
    run_deviation,
    run_equilibrium,
    run_moment_bound,
    run_simulation,
)
from kmf.experiments.common import fit_loglinear, linear_fit, replica_batches, run_parallel
from kmf.experiments.deviation import OBSERVABLES, empirical_averages, get_observable, tail_fit
from kmf.io import read_snapshot
from kmf.model import Coefficients


def make_cfg(kind='linear', gamma=0.0, delta=0.0, **overrides):
    settings = dict(N=8, dt=0.01, T=2.0, replicas=4, seed=11, stride=10)
    settings.update(overrides)
    knobs = settings.pop('knobs', {})
    return ExperimentConfig(kind=kind, coeffs=Coefficients(1.0, 1.0, 1.0, gamma=gamma, delta=delta),
                            knobs=knobs, **settings)


def verdict_map(result):
    return {v.experiment: v for v in result.verdicts}


# shared plumbing

def test_linear_fit_on_exact_line():
    x = np.linspace(0.0, 1.0, 11)
    fit = linear_fit(x, 3.0 - 2.0 * x, (0.0, 1.0))
    assert fit.slope == pytest.approx(-2.0)
    assert fit.intercept == pytest.approx(3.0)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.half_width == pytest.approx(0.0, abs=1e-9)


def test_loglinear_fit_recovers_rate():
    t = np.linspace(0.0, 10.0, 101)
    fit = fit_loglinear(t, 5.0 * np.exp(-0.7 * t), 2.0, 8.0)
    assert fit.rate == pytest.approx(0.7)
    assert fit.window == (2.0, 8.0)


def test_loglinear_fit_degenerate_windows():
    t = np.linspace(0.0, 1.0, 11)
    assert fit_loglinear(t, np.zeros_like(t), 0.0, 1.0).status == 'degenerate'
    assert fit_loglinear(t, t - 0.5, 0.0, 1.0).status == 'non-positive values in window'
    assert math.isnan(fit_loglinear(t, np.exp(-t), 0.0, 0.1).slope)


def test_verdict_rows_and_overall_pass():
    informational = Verdict('info', None, 1.0, None, None)
    assert informational.to_row()['pass'] == ''
    assert math.isnan(informational.to_row()['theory_value'])
    passing = ExperimentResult('x', pd.DataFrame(), [informational, Verdict('a', 1.0, 1.0, 1.0, True)])
    assert passing.passed
    failing = ExperimentResult('x', pd.DataFrame(), [Verdict('a', 1.0, 2.0, 1.0, False)])
    assert not failing.passed


def test_replica_batches_cover_range():
    assert replica_batches(10, 4) == [(0, 4), (4, 4), (8, 2)]
    assert replica_batches(3, 256) == [(0, 3)]


def test_run_parallel_keeps_task_order(monkeypatch):
    monkeypatch.setenv('KMF_THREADS', '4')
    def work(index, offset):
        return index * 10 + offset

    assert run_parallel(work, [(i, 0) for i in range(20)]) == [i * 10 for i in range(20)]


def test_knob_and_law_resolution():
    cfg = make_cfg(knobs={'initial': {'kind': 'dirac', 'mean_x': 2.0}, 'mode': None})
    assert cfg.knob('mode', 'auto') == 'auto'
    assert cfg.law('initial', None).mean_x == 2.0
    assert cfg.n_steps == 200


# contraction

def test_free_linear_contraction():
    result = run_contraction(make_cfg(N=8, T=5.0, replicas=4))
    verdicts = verdict_map(result)
    assert verdicts['contraction'].measured >= 0.8 / 3.0
    assert verdicts['contraction_oracle'].passed
    assert {'t', 'N', 'Q_diff', 'Q_stderr', 'Q_oracle'} <= set(result.series.columns)
    assert result.extras['report']['rate_C'] == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_terminal_distance_and_transport_check():
    result = run_contraction(make_cfg(N=8, T=1.0, replicas=4, knobs={'ot_replicas': 3}))
    verdicts = verdict_map(result)
    terminal = verdicts['contraction_terminal_dq']
    assert terminal.passed is None
    assert terminal.measured == pytest.approx(result.series['Q_diff'].iloc[-1], rel=1e-9)
    assert result.extras['terminal_dq'][8][0] == terminal.measured
    check = verdicts['contraction_ot_check']
    assert check.passed
    assert 0.0 < check.measured <= check.theory_value * (1.0 + 1e-9)


def test_identical_laws_skip_the_rate_fit():
    same = {'kind': 'gaussian', 'mean_x': 0.0, 'mean_v': 0.0, 'std': 1.0}
    result = run_contraction(make_cfg(N=6, T=1.0, knobs={'initial_a': same, 'initial_b': same}))
    verdicts = verdict_map(result)
    assert result.fit.status == 'degenerate'
    assert verdicts['contraction'].passed is None
    assert verdicts['contraction'].measured is None
    assert 'contraction_oracle' not in verdicts
    assert verdicts['contraction_terminal_dq'].measured == 0.0
    assert verdicts['contraction_ot_check'].passed
    assert result.passed


def test_contraction_series_match_oracle_exactly():
    result = run_contraction(make_cfg(N=6, T=1.0, replicas=3, gamma=0.1))
    np.testing.assert_allclose(result.series['Q_diff'], result.series['Q_oracle'], rtol=1e-9)


def test_sinusoidal_contraction_runs():
    result = run_contraction(make_cfg(kind='sinusoidal', gamma=0.05, delta=0.05, N=8, T=2.0))
    assert 'Q_oracle' not in result.series.columns
    assert result.series['Q_diff'].iloc[-1] < result.series['Q_diff'].iloc[0]


def test_contraction_over_n_ladder():
    result = run_contraction(make_cfg(T=3.0, knobs={'n_ladder': [4, 8]}))
    names = set(verdict_map(result))
    assert {'contraction[N=4]', 'contraction[N=8]', 'contraction_N_spread'} <= names
    assert sorted(result.series['N'].unique()) == [4, 8]


def test_results_do_not_depend_on_thread_count(monkeypatch):
    monkeypatch.setattr(TestingConfig, 'REPLICA_BATCH', 2)
    cfg = make_cfg(kind='sinusoidal', gamma=0.05, N=5, T=0.5, replicas=6, stride=5)
    monkeypatch.setenv('KMF_THREADS', '1')
    serial = run_contraction(cfg).series
    monkeypatch.setenv('KMF_THREADS', '3')
    threaded = run_contraction(cfg).series
    pd.testing.assert_frame_equal(serial, threaded, check_exact=True)


# equilibrium

@pytest.mark.slow
def test_far_apart_systems_meet():
    result = run_equilibrium(make_cfg(N=500, T=15.0, replicas=1, stride=100))
    verdicts = verdict_map(result)
    assert verdicts['equilibrium_cross_w2'].passed
    assert 'equilibrium_var_x' in verdicts
    assert set(result.series['system']) == {'a', 'b'}


def test_equilibrium_variances_at_acceptance_scale():
    cfg = make_cfg(N=20000, dt=0.005, T=10.0, replicas=1, stride=500, knobs={'ot_sample': 256})
    verdicts = verdict_map(run_equilibrium(cfg))
    for name in ('equilibrium_var_x', 'equilibrium_var_v'):
        assert verdicts[name].theory_value == pytest.approx(1.0)
        assert verdicts[name].threshold == 0.05
        assert verdicts[name].passed, verdicts[name]


# chaos

def test_chaos_without_interaction_is_exact():
    result = run_chaos(make_cfg(T=0.5, replicas=2, stride=5, knobs={'n_ladder': [4, 8, 16]}))
    verdicts = verdict_map(result)
    assert verdicts['chaos_zero_error'].passed
    assert result.extras['mode'] == 'exact'
    assert all(value == 0.0 for value in result.extras['sup_errors'].values())


def test_chaos_linear_slope():
    cfg = make_cfg(gamma=0.1, dt=0.02, T=1.0, replicas=256, stride=5,
                   knobs={'n_ladder': [8, 16, 32], 'check_time_uniformity': False})
    result = run_chaos(cfg)
    assert -1.5 < result.fit.slope < -0.5
    prefactor = verdict_map(result)['chaos_prefactor']
    assert prefactor.passed is None
    assert prefactor.measured > 0.0


def test_chaos_time_uniformity_verdict():
    cfg = make_cfg(gamma=0.1, T=0.5, replicas=8, stride=5, knobs={'n_ladder': [4, 8, 16]})
    result = run_chaos(cfg)
    assert 'chaos_time_uniformity[N=4]' in verdict_map(result)
    horizon = result.series[result.series['N'] == 4]['t'].max()
    assert horizon == pytest.approx(1.0)


def test_chaos_proxy_mode_for_nonlinear_field():
    cfg = make_cfg(kind='sinusoidal', gamma=0.1, T=0.3, replicas=2, stride=5,
                   knobs={'n_ladder': [4, 8, 16], 'proxy_m': 40, 'check_time_uniformity': False})
    result = run_chaos(cfg)
    assert result.extras['mode'] == 'proxy'
    assert all(value > 0 for value in result.extras['sup_errors'].values())


def test_chaos_exact_mode_needs_linear_field():
    cfg = make_cfg(kind='sinusoidal', gamma=0.1, knobs={'mode': 'exact'})
    with pytest.raises(ExperimentError):
        run_chaos(cfg)


# deviation

def deviation_cfg(**knobs):
    settings = {'n_ladder': [16, 32], 'reference_N': 100, 'reference_T': 1.0}
    settings.update(knobs)
    return make_cfg(dt=0.05, T=1.0, replicas=4000, knobs=settings)


@pytest.mark.slow
def test_deviation_variance_halves():
    result = run_deviation(deviation_cfg())
    verdicts = verdict_map(result)
    assert verdicts['deviation_variance_ratio[N=16]'].passed
    assert 'deviation_tail_slope_ratio[N=16]' in verdicts
    assert verdicts['deviation_reference_mean'].passed is None
    summary = result.extras['summary']
    assert summary[16]['slope'] < 0 and summary[32]['slope'] < 0


def test_ladder_rungs_draw_independent_paths():
    cfg = make_cfg(dt=0.05, T=0.5, replicas=8)
    law = InitialLaw(LawKind.DIRAC, 1.0, 0.0)
    x1 = get_observable('x1')
    small = empirical_averages(cfg, 4, cfg.n_steps, law, x1)
    large = empirical_averages(cfg, 8, cfg.n_steps, law, x1, replica_offset=cfg.replicas)
    # without interaction, shared paths would make S(8) the mean of two S(4) values
    assert not np.allclose(large[:4], 0.5 * (small[0::2] + small[1::2]))
    again = empirical_averages(cfg, 8, cfg.n_steps, law, x1, replica_offset=cfg.replicas)
    np.testing.assert_array_equal(large, again)


def test_deviation_needs_dirac_start():
    with pytest.raises(ExperimentError):
        run_deviation(deviation_cfg(initial={'kind': 'gaussian'}))


def test_tail_fit_needs_enough_exceedances():
    with pytest.raises(ExperimentError):
        tail_fit(np.linspace(-1.0, 1.0, 10), 8, np.linspace(0.1, 0.5, 5), 25)


def test_tail_fit_on_gaussian_sample(rng):
    sample = rng.normal(0.0, 0.1, 200000)
    fit = tail_fit(sample, 50, np.linspace(0.1, 0.3, 5), 25)
    assert fit.slope < 0
    assert fit.median_exceedance == pytest.approx(0.5, abs=0.01)
    assert fit.table['used'].all()


def test_registered_observable_is_rescaled(monkeypatch):
    monkeypatch.setitem(OBSERVABLES, 'v1', None)
    register_observable('v1', lambda X, V: V[..., 0], lipschitz=2.0)
    value = get_observable('v1')(np.zeros((1, 1)), np.full((1, 1), 3.0))
    assert value[0] == pytest.approx(1.5)
    with pytest.raises(ExperimentError):
        get_observable('missing')


# moments

def test_moment_bound_holds():
    result = run_moment_bound(make_cfg(N=500, T=10.0, replicas=1, stride=10))
    verdicts = verdict_map(result)
    assert verdicts['moment_uniform_bound'].passed
    assert verdicts['moment_argmax_time'].passed is None
    assert result.extras['bound'] == pytest.approx(12.6, rel=1e-5)
    assert {'m2', 'running_max'} <= set(result.series.columns)


@pytest.mark.slow
def test_free_plateau():
    result = run_moment_bound(make_cfg(N=4000, T=20.0, replicas=1, stride=10))
    assert verdict_map(result)['moment_plateau'].passed


# simulate

def test_simulation_with_snapshot(tmp_path):
    cfg = make_cfg(N=6, T=0.1, replicas=1, stride=5, knobs={'snapshot': True})
    result = run_simulation(cfg, tmp_path)
    state, meta = read_snapshot(result.extras['snapshot'])
    assert meta['N'] == 6 and meta['seed'] == 11
    np.testing.assert_allclose(state.X, result.extras['final_state'].X, rtol=1e-11)
    assert result.passed
