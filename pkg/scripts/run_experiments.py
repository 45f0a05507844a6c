#!/usr/bin/env python3
"""
Run the verification experiments one after another at their default scale.
Writes everything under --output-dir and exits non-zero if any verdict failed.
"""

import logging
import sys
from pathlib import Path

import click

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from kmf.cli import EXIT_OK, main  # noqa: E402
from kmf.logging_configuration import configure_logging  # noqa: E402

logger = logging.getLogger(__name__)

ALL_EXPERIMENTS = ['contraction', 'equilibrium', 'chaos', 'deviation', 'moments']


@click.command()
@click.option('--output-dir', default='results', show_default=True)
@click.option('--only', multiple=True, type=click.Choice(ALL_EXPERIMENTS), help='Subset to run')
@click.option('--seed', type=int, default=None)
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None)
def run_all(output_dir, only, seed, config_path):
    """Run the experiment suite"""
    configure_logging()
    failures = []
    for name in only or ALL_EXPERIMENTS:
        argv = [name, '--output-dir', str(Path(output_dir) / name)]
        if seed is not None:
            argv += ['--seed', str(seed)]
        if config_path:
            argv += ['--config', config_path]
        logger.info(f"▶ {name}")
        code = main(argv)
        if code != EXIT_OK:
            logger.error(f"❌ {name} exited with {code}")
            failures.append(name)
        else:
            logger.info(f"✅ {name}")

    if failures:
        logger.error(f"Failed: {', '.join(failures)}")
        sys.exit(2)
    logger.info("All experiments passed")


if __name__ == '__main__':
    run_all()
