import json

import pandas as pd
import pytest

from kmf.cli import EXIT_ERROR, EXIT_OK, EXIT_VERDICT_FAILED, main, parse_config
from kmf.config import DEFAULT_SEED
from kmf.errors import ConfigError
from kmf.experiments import RUNNERS, ExperimentResult, Verdict
from kmf.io import read_csv, write_json


def write_toml(tmp_path, text, name='run.toml'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return path


def test_empty_file_gives_defaults(tmp_path):
    run_config = parse_config(write_toml(tmp_path, ''))
    assert run_config.experiment.name == 'simulate'
    assert run_config.sim.seed == DEFAULT_SEED
    assert run_config.sim.N == 1000
    assert run_config.field.kind == 'linear'
    assert run_config.output_dir


def test_experiment_defaults_are_materialized(tmp_path):
    run_config = parse_config(write_toml(tmp_path, ''), experiment='deviation')
    assert (run_config.sim.N, run_config.sim.dt, run_config.sim.replicas) == (64, 1e-2, 10000)


def test_environment_sets_run_length_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv('KMF_DT', '0.005')
    monkeypatch.setenv('KMF_T', '2.5')
    run_config = parse_config(write_toml(tmp_path, '[sim]\nT = 4.0\n'), experiment='contraction')
    assert (run_config.sim.dt, run_config.sim.T) == (0.005, 4.0)


def test_environment_run_length_is_checked(tmp_path, monkeypatch):
    monkeypatch.setenv('KMF_DT', '-0.1')
    with pytest.raises(ConfigError, match='dt must be positive'):
        parse_config(write_toml(tmp_path, ''))


def test_flags_override_file(tmp_path):
    path = write_toml(tmp_path, '[sim]\nN = 64\ndt = 0.002\n')
    run_config = parse_config(path, {'sim': {'N': 128, 'dt': None}}, 'contraction')
    assert run_config.sim.N == 128
    assert run_config.sim.dt == 0.002


def test_inadmissible_interaction_cites_threshold(tmp_path):
    path = write_toml(tmp_path, '[field]\ngamma = 0.3\n')
    with pytest.raises(ConfigError, match='0.267949'):
        parse_config(path, experiment='contraction')


def test_simulate_skips_admissibility(tmp_path):
    path = write_toml(tmp_path, '[field]\ngamma = 0.3\n')
    assert parse_config(path, experiment='simulate').field.gamma == 0.3


@pytest.mark.parametrize('text', [
    '[field]\nalpah = 1.0\n',
    'extra = 1\n',
    '[sim]\nN = "many"\n',
    '[field]\nkind = "coulomb"\n',
    '[experiment]\nobservable = "unknown"\n',
    '[field]\nalpha = 2.0\n',
])
def test_bad_configs_are_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        parse_config(write_toml(tmp_path, text))


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write_toml(tmp_path, '[field\n'))


def test_knobs_are_validated_and_kept(tmp_path):
    path = write_toml(tmp_path, '[experiment]\nn_ladder = [8, 16]\nmode = "proxy"\n'
                                '[experiment.initial]\nkind = "dirac"\nmean_x = [1.0, 2.0]\n')
    run_config = parse_config(path, experiment='chaos')
    assert run_config.experiment.knobs['n_ladder'] == [8, 16]
    assert run_config.experiment.knobs['initial'] == {'kind': 'dirac', 'mean_x': [1.0, 2.0], 'mean_v': 0.0,
                                                      'std': 1.0}


def test_resolved_config_round_trips(tmp_path):
    path = write_toml(tmp_path, '[field]\nkind = "sinusoidal"\ngamma = 0.05\ndelta = 0.05\n'
                                '[experiment]\nn_ladder = [16, 32]\n')
    run_config = parse_config(path, {'output_dir': str(tmp_path / 'out')}, 'chaos')
    resolved = write_json(run_config.to_dict(), tmp_path / 'resolved_config.json')
    assert parse_config(resolved) == run_config


def test_rates_command(tmp_path, capsys):
    code = main(['rates', '--alpha', '1', '--alpha-prime', '1', '--beta', '1', '--eta', '0',
                 '--output-dir', str(tmp_path), '--no-timestamp'])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert 'rate_C' in out
    row = read_csv(tmp_path / 'rates_report.csv').iloc[0]
    assert row['rate_C'] == pytest.approx(1.0 / 3.0, abs=1e-6)
    assert row['b_star'] == pytest.approx(2.0, abs=1e-4)


def test_rates_command_rejects_inadmissible_eta(tmp_path, capsys):
    code = main(['rates', '--eta', '0.3', '--output-dir', str(tmp_path)])
    assert code == EXIT_ERROR
    assert 'eta0' in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(['fly']) == EXIT_ERROR


def test_bad_knob_syntax(tmp_path):
    assert main(['simulate', '--knob', 'snapshot', '--output-dir', str(tmp_path)]) == EXIT_ERROR


def test_config_error_exit_code(tmp_path, capsys):
    code = main(['contraction', '--gamma', '0.3', '--output-dir', str(tmp_path)])
    assert code == EXIT_ERROR
    assert '0.267949' in capsys.readouterr().err


def simulate_args(output_dir, seed=1):
    return ['simulate', '--N', '10', '--T', '0.2', '--dt', '0.01', '--stride', '5', '--seed', str(seed),
            '--output-dir', str(output_dir), '--no-timestamp', '--knob', 'snapshot=true']


def test_simulate_writes_outputs(tmp_path):
    assert main(simulate_args(tmp_path)) == EXIT_OK
    series = read_csv(tmp_path / 'simulate_series.csv')
    assert list(series['t']) == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2])
    assert (tmp_path / 'simulate_snapshot.csv').exists()
    resolved = json.loads((tmp_path / 'resolved_config.json').read_text())
    assert resolved['sim']['N'] == 10
    assert resolved['experiment'] == {'name': 'simulate', 'snapshot': True}


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    main(simulate_args(tmp_path / 'first'))
    monkeypatch.setenv('KMF_THREADS', '4')
    main(simulate_args(tmp_path / 'second'))
    for name in ('simulate_series.csv', 'simulate_snapshot.csv', 'simulate_verdict.csv'):
        assert (tmp_path / 'first' / name).read_bytes() == (tmp_path / 'second' / name).read_bytes()


def test_transport_command(tmp_path, capsys):
    main(simulate_args(tmp_path / 'a', seed=1))
    main(simulate_args(tmp_path / 'b', seed=2))
    capsys.readouterr()
    code = main(['transport', str(tmp_path / 'a' / 'simulate_snapshot.csv'),
                 str(tmp_path / 'b' / 'simulate_snapshot.csv'), '--metric', 'qform', '--b', '2',
                 '--output-dir', str(tmp_path), '--plan', str(tmp_path / 'plan.csv'), '--no-timestamp'])
    assert code == EXIT_OK
    assert 'W2 (exact, qform)' in capsys.readouterr().out
    result = read_csv(tmp_path / 'transport_result.csv').iloc[0]
    assert result['distance'] > 0
    assert sorted(read_csv(tmp_path / 'plan.csv')['target']) == list(range(10))


def test_transport_qform_needs_b(tmp_path):
    main(simulate_args(tmp_path))
    snapshot = str(tmp_path / 'simulate_snapshot.csv')
    assert main(['transport', snapshot, snapshot, '--metric', 'qform']) == EXIT_ERROR


def test_chaos_command_without_interaction(tmp_path):
    code = main(['chaos', '--gamma', '0', '--N', '8', '--T', '0.1', '--dt', '0.01', '--replicas', '2',
                 '--stride', '5', '--knob', 'n_ladder=[4, 8]', '--output-dir', str(tmp_path), '--no-timestamp'])
    assert code == EXIT_OK
    verdicts = read_csv(tmp_path / 'chaos_verdict.csv')
    assert 'chaos_zero_error' in set(verdicts['experiment'])


def test_failed_verdict_exit_code(tmp_path, monkeypatch):
    def failing(cfg):
        return ExperimentResult(name='moments', series=pd.DataFrame({'t': [0.0]}),
                                verdicts=[Verdict('moment_tail_slope', 0.0, 1.0, 0.01, False)])

    monkeypatch.setitem(RUNNERS, 'moments', failing)
    assert main(['moments', '--output-dir', str(tmp_path), '--no-timestamp']) == EXIT_VERDICT_FAILED
    assert read_csv(tmp_path / 'moments_verdict.csv')['pass'].tolist() == [False]
