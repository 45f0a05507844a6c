from kmf.experiments.chaos import run_chaos
from kmf.experiments.common import ExperimentConfig, ExperimentResult, FitResult, Verdict
from kmf.experiments.contraction import run_contraction
from kmf.experiments.deviation import register_observable, run_deviation
from kmf.experiments.equilibrium import run_equilibrium
from kmf.experiments.moments import run_moment_bound
from kmf.experiments.simulate import run_simulation
from kmf.experiments import chaos, contraction, deviation, equilibrium, moments, simulate
from kmf.rates import Variant

# name -> (driver module, variant whose eta0 gates admissibility)
EXPERIMENTS = {
    'contraction': (contraction, Variant.CONTRACTION),
    'equilibrium': (equilibrium, Variant.CONTRACTION),
    'chaos': (chaos, Variant.DOUBLED_ALPHA),
    'deviation': (deviation, Variant.CONTRACTION),
    'moments': (moments, Variant.DOUBLED_ALPHA),
    'simulate': (simulate, None),
}

RUNNERS = {
    'contraction': run_contraction,
    'equilibrium': run_equilibrium,
    'chaos': run_chaos,
    'deviation': run_deviation,
    'moments': run_moment_bound,
}

__all__ = [
    'EXPERIMENTS',
    'RUNNERS',
    'ExperimentConfig',
    'ExperimentResult',
    'FitResult',
    'Verdict',
    'register_observable',
    'run_chaos',
    'run_contraction',
    'run_deviation',
    'run_equilibrium',
    'run_moment_bound',
    'run_simulation',
]
