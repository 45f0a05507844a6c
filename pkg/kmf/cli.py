"""
Command-line entry point

    kmf rates --alpha 1 --alpha-prime 1 --beta 1 --eta 0
    kmf contraction --config run.toml --N 128
    kmf transport a.csv b.csv --metric qform --b 2 --beta 1

Exit codes: 0 success, 2 an experiment verdict failed, 1 usage or configuration error.
"""

import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import pandas as pd
from marshmallow import ValidationError

from kmf.config import Config, get_config, validate_config
from kmf.errors import ConfigError, InvalidCoefficientsError, KmfError
from kmf.experiments import EXPERIMENTS, RUNNERS, ExperimentConfig, run_simulation
from kmf.io import frame_to_csv_text, output_path, read_snapshot, write_csv, write_json
from kmf.logging_configuration import configure_logging
from kmf.model import Coefficients, make_field
from kmf.rates import QForm, contraction_rate, eta0
from kmf.schemas import RunConfig, run_config_schema
from kmf.transport import GroundMetric, PointCloud, w2_entropic, w2_exact

logger = logging.getLogger('kmf.cli')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERDICT_FAILED = 2


def load_config_file(path) -> Dict[str, Any]:
    """TOML (default) or JSON by extension"""
    path = Path(path)
    try:
        if path.suffix.lower() == '.json':
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        else:
            with open(path, 'rb') as handle:
                data = tomllib.load(handle)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a table at top level")
    return data


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        elif isinstance(value, dict):
            merged[key] = _merge({}, value)
        elif value is not None:
            merged[key] = value
    return merged


def parse_config(path=None, overrides: Optional[Dict[str, Any]] = None,
                 experiment: Optional[str] = None) -> RunConfig:
    """
    Load, merge and validate a run configuration.  Flags (overrides) win over
    the file, defaults of the chosen experiment fill the rest.
    """
    data = load_config_file(path) if path else {}
    data = _merge(data, overrides or {})
    if experiment is not None:
        data.setdefault('experiment', {})
        if not isinstance(data['experiment'], dict):
            raise ConfigError("'experiment' must be a table")
        data['experiment']['name'] = experiment

    try:
        run_config = run_config_schema.load(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.messages}") from exc

    name = run_config.experiment.name or 'simulate'
    run_config.experiment.name = name
    module, variant = EXPERIMENTS[name]

    sim = run_config.sim
    for key, value in module.DEFAULTS.items():
        if getattr(sim, key) is None:
            setattr(sim, key, Config.sim_default(key, value))
    if not (sim.dt > 0 and sim.T >= 0):
        raise ConfigError(f"dt must be positive and T non-negative, got dt={sim.dt:g}, T={sim.T:g}")
    if sim.seed is None:
        sim.seed = Config.default_seed()
    if run_config.output_dir is None:
        run_config.output_dir = Config.get('KMF_OUTPUT_DIR', get_config().OUTPUT_DIR)

    try:
        coeffs = run_config.field.coefficients()
        make_field(run_config.field.kind, coeffs, offset=run_config.field.offset)
        threshold = eta0(coeffs, variant) if variant is not None else None
    except InvalidCoefficientsError as exc:
        raise ConfigError(f"invalid field: {exc}") from exc

    if threshold is not None:
        if coeffs.eta >= threshold:
            raise ConfigError(
                f"gamma + delta = {coeffs.eta:g} is not admissible for '{name}': "
                f"it must be below eta0 = {threshold:.6g}"
            )
    return run_config


def experiment_config(run_config: RunConfig) -> ExperimentConfig:
    sim = run_config.sim
    return ExperimentConfig(
        kind=run_config.field.kind,
        coeffs=run_config.field.coefficients(),
        N=sim.N, dt=sim.dt, T=sim.T, replicas=sim.replicas, seed=sim.seed, stride=sim.stride,
        knobs=dict(run_config.experiment.knobs), offset=run_config.field.offset,
    )


def _parse_knobs(values: List[str]) -> Dict[str, Any]:
    knobs = {}
    for item in values:
        key, sep, raw = item.partition('=')
        if not sep or not key:
            raise click.BadParameter(f"expected KEY=VALUE, got '{item}'", param_hint='--knob')
        try:
            knobs[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            knobs[key.strip()] = raw
    return knobs


def run_options(fn):
    """Options shared by every simulation subcommand"""
    options = [
        click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                     help='TOML or JSON run configuration'),
        click.option('--output-dir', type=click.Path(file_okay=False), help='Directory for all outputs'),
        click.option('--seed', type=int, help='Master seed of the noise stream'),
        click.option('--N', 'n_particles', type=int, help='Particle count'),
        click.option('--dt', type=float, help='Time step'),
        click.option('--T', 'horizon', type=float, help='Time horizon'),
        click.option('--replicas', type=int, help='Independent replicas'),
        click.option('--stride', type=int, help='Recording stride in steps'),
        click.option('--no-timestamp', is_flag=True, default=False, help='Omit the generated-at header line'),
        click.option('--kind', type=click.Choice(['linear', 'sinusoidal']), help='Force field'),
        click.option('--alpha', type=float),
        click.option('--alpha-prime', type=float),
        click.option('--beta', type=float),
        click.option('--gamma', type=float),
        click.option('--delta', type=float),
        click.option('--dim', type=int),
        click.option('--offset', type=float, help='Constant D of the linear field'),
        click.option('--knob', 'knobs', multiple=True, help='Experiment knob as KEY=VALUE (JSON value)'),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _overrides(options: Dict[str, Any]) -> Dict[str, Any]:
    return {
        'output_dir': options['output_dir'],
        'field': {
            'kind': options['kind'], 'alpha': options['alpha'], 'alpha_prime': options['alpha_prime'],
            'beta': options['beta'], 'gamma': options['gamma'], 'delta': options['delta'],
            'dim': options['dim'], 'offset': options['offset'],
        },
        'sim': {
            'N': options['n_particles'], 'dt': options['dt'], 'T': options['horizon'],
            'stride': options['stride'], 'seed': options['seed'], 'replicas': options['replicas'],
        },
        'experiment': _parse_knobs(options['knobs']),
    }


def _run(name: str, options: Dict[str, Any]) -> int:
    run_config = parse_config(options['config_path'], _overrides(options), name)
    output_dir = Path(run_config.output_dir)
    timestamp = Config.timestamps_enabled() and not options['no_timestamp']
    write_json(run_config.to_dict(), output_dir / 'resolved_config.json')
    cfg = experiment_config(run_config)

    if name == 'simulate':
        result = run_simulation(cfg, output_dir, timestamp)
    else:
        result = RUNNERS[name](cfg)
    result.write(output_dir, timestamp)

    if result.verdicts:
        click.echo(frame_to_csv_text(result.verdict_table()), nl=False)
    if result.passed:
        logger.info("✅ %s passed", name)
        return EXIT_OK
    logger.warning("❌ %s failed", name)
    return EXIT_VERDICT_FAILED


@click.group()
@click.option('--log-level', default=None, help='Override LOG_LEVEL')
def cli(log_level):
    """Kinetic mean-field simulations, rate constants and verification experiments"""
    configure_logging(log_level)
    checks = validate_config()
    for warning in checks['warnings']:
        logger.warning(warning)
    if not checks['valid']:
        raise ConfigError("; ".join(checks['issues']))


@cli.command()
@click.option('--alpha', type=float, default=1.0, show_default=True)
@click.option('--alpha-prime', type=float, default=1.0, show_default=True)
@click.option('--beta', type=float, default=1.0, show_default=True)
@click.option('--eta', type=float, default=0.0, show_default=True, help='gamma + delta')
@click.option('--variant', type=click.Choice(['contraction', 'doubled_alpha']), default='contraction',
              show_default=True)
@click.option('--mode', type=click.Choice(['fixed_eps', 'full', 'full_lmi']), default='fixed_eps', show_default=True)
@click.option('--output-dir', type=click.Path(file_okay=False), default=None)
@click.option('--no-timestamp', is_flag=True, default=False)
def rates(alpha, alpha_prime, beta, eta, variant, mode, output_dir, no_timestamp):
    """Print the contraction constants for the given coefficients"""
    try:
        coeffs = Coefficients(alpha, alpha_prime, beta)
    except InvalidCoefficientsError as exc:
        raise ConfigError(str(exc)) from exc
    report = contraction_rate(coeffs, eta, variant, mode)
    frame = pd.DataFrame([report.to_row()])
    click.echo(report.describe())
    click.echo(frame_to_csv_text(frame), nl=False)
    output_dir = Path(output_dir or Config.get('KMF_OUTPUT_DIR', get_config().OUTPUT_DIR))
    write_csv(frame, output_dir / 'rates_report.csv', Config.timestamps_enabled() and not no_timestamp)
    return EXIT_OK


def _make_experiment_command(name: str, help_text: str):
    @run_options
    def command(**options):
        return _run(name, options)

    command.__doc__ = help_text
    cli.command(name=name)(command)


for _name, _help in (
    ('simulate', 'Run the particle system and record its moments'),
    ('contraction', 'Fit the decay rate of synchronously coupled systems'),
    ('equilibrium', 'Compare far-apart systems after a long run'),
    ('chaos', 'Coupling error between the particle system and nonlinear copies versus N'),
    ('deviation', 'Tail and variance scaling of empirical averages versus N'),
    ('moments', 'Long-run second moment plateau'),
):
    _make_experiment_command(_name, _help)


@cli.command()
@click.argument('snapshot_a', type=click.Path(exists=True, dir_okay=False))
@click.argument('snapshot_b', type=click.Path(exists=True, dir_okay=False))
@click.option('--metric', type=click.Choice(['euclidean', 'qform']), default='euclidean', show_default=True)
@click.option('--b', 'b_param', type=float, default=None, help='Q-form parameter b')
@click.option('--beta', type=float, default=1.0, show_default=True)
@click.option('--exact/--entropic', default=True, show_default=True)
@click.option('--eps', 'reg_eps', type=float, default=0.05, show_default=True, help='Entropic regularization')
@click.option('--max-iter', type=int, default=10000, show_default=True)
@click.option('--plan', 'plan_path', type=click.Path(dir_okay=False), default=None, help='Write the plan here')
@click.option('--output-dir', type=click.Path(file_okay=False), default=None)
@click.option('--no-timestamp', is_flag=True, default=False)
def transport(snapshot_a, snapshot_b, metric, b_param, beta, exact, reg_eps, max_iter, plan_path,
              output_dir, no_timestamp):
    """W2 distance between two snapshot files"""
    try:
        state_a, _ = read_snapshot(snapshot_a)
        state_b, _ = read_snapshot(snapshot_b)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read snapshot: {exc}") from exc
    a, b = PointCloud.from_state(state_a), PointCloud.from_state(state_b)
    if metric == 'qform':
        if b_param is None:
            raise click.UsageError("--metric qform needs --b")
        ground = GroundMetric.from_qform(QForm(b_param, beta))
    else:
        ground = GroundMetric.euclidean()

    if exact:
        distance, plan = w2_exact(a, b, ground)
    else:
        distance, plan = w2_entropic(a, b, ground, reg_eps=reg_eps, max_iter=max_iter)
    click.echo(f"W2 ({'exact' if exact else 'entropic'}, {metric}) = {distance:.12g}")

    timestamp = Config.timestamps_enabled() and not no_timestamp
    output_dir = Path(output_dir or Config.get('KMF_OUTPUT_DIR', get_config().OUTPUT_DIR))
    summary = pd.DataFrame([{
        'method': 'exact' if exact else 'entropic', 'metric': metric, 'n': a.n, 'distance': distance,
        'objective': plan.objective, 'converged': str(plan.converged).lower(),
        'marginal_error': plan.marginal_error,
    }])
    write_csv(summary, output_path(output_dir, 'transport', 'result'), timestamp)
    if plan_path:
        if plan.permutation is not None:
            frame = pd.DataFrame({'source': range(a.n), 'target': plan.permutation})
        else:
            frame = pd.DataFrame(plan.coupling)
        write_csv(frame, plan_path, timestamp)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map outcomes to exit codes"""
    try:
        result = cli.main(args=argv, prog_name='kmf', standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_ERROR
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except KmfError as exc:
        logger.error(f"❌ {exc}")
        click.echo(f"Error: {exc}", err=True)
        return EXIT_ERROR
    return result if isinstance(result, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
