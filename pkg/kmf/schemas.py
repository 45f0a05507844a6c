"""
Run-configuration schemas

One canonical key set, loaded from TOML or JSON:

    output_dir = "results"
    [field]       kind, alpha, alpha_prime, beta, gamma, delta, dim, offset
    [sim]         N, dt, T, stride, seed, replicas
    [experiment]  name plus the knobs below
"""

from dataclasses import asdict, dataclass, field
from numbers import Real
from typing import Any, Dict, Optional

from marshmallow import RAISE, Schema, ValidationError, fields, post_load, validate

from kmf.model import Coefficients

EXPERIMENT_NAMES = ('contraction', 'equilibrium', 'chaos', 'deviation', 'moments', 'simulate')


def validate_observable(value):
    """Observable names are resolved against the runtime registry"""
    from kmf.experiments.deviation import OBSERVABLES
    if value not in OBSERVABLES:
        raise ValidationError(f"Invalid observable: {value}. Valid observables are: {', '.join(sorted(OBSERVABLES))}.")


class Vector(fields.Field):
    """A number or a list of numbers (per-coordinate value)"""

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, bool):
            raise ValidationError("Expected a number or a list of numbers.")
        if isinstance(value, Real):
            return float(value)
        if isinstance(value, (list, tuple)) and value and all(
                isinstance(v, Real) and not isinstance(v, bool) for v in value):
            return [float(v) for v in value]
        raise ValidationError("Expected a number or a list of numbers.")


class InitialLawSchema(Schema):
    class Meta:
        unknown = RAISE
        ordered = True

    kind = fields.String(load_default='gaussian', validate=validate.OneOf(['dirac', 'gaussian']))
    mean_x = Vector(load_default=0.0)
    mean_v = Vector(load_default=0.0)
    std = fields.Float(load_default=1.0, validate=validate.Range(min=0))


class FieldSchema(Schema):
    class Meta:
        unknown = RAISE
        ordered = True

    kind = fields.String(load_default='linear', validate=validate.OneOf(['linear', 'sinusoidal']))
    alpha = fields.Float(load_default=1.0, validate=validate.Range(min=0))
    alpha_prime = fields.Float(load_default=1.0, validate=validate.Range(min=0))
    beta = fields.Float(load_default=1.0, validate=validate.Range(min=0))
    gamma = fields.Float(load_default=0.0, validate=validate.Range(min=0))
    delta = fields.Float(load_default=0.0, validate=validate.Range(min=0))
    dim = fields.Integer(load_default=1, validate=validate.Range(min=1))
    offset = fields.Float(load_default=0.0)


class SimSchema(Schema):
    """Unset values are filled from the chosen experiment's defaults"""
    class Meta:
        unknown = RAISE
        ordered = True

    N = fields.Integer(load_default=None, allow_none=True, validate=validate.Range(min=1))
    dt = fields.Float(load_default=None, allow_none=True, validate=validate.Range(min=0, min_inclusive=False))
    T = fields.Float(load_default=None, allow_none=True, validate=validate.Range(min=0))
    stride = fields.Integer(load_default=None, allow_none=True, validate=validate.Range(min=1))
    seed = fields.Integer(load_default=None, allow_none=True, validate=validate.Range(min=0, max=2 ** 64 - 1))
    replicas = fields.Integer(load_default=None, allow_none=True, validate=validate.Range(min=1))


class ExperimentSchema(Schema):
    class Meta:
        unknown = RAISE
        ordered = True

    name = fields.String(load_default=None, allow_none=True, validate=validate.OneOf(EXPERIMENT_NAMES))

    # initial laws
    initial = fields.Nested(InitialLawSchema, allow_none=True)
    initial_a = fields.Nested(InitialLawSchema, allow_none=True)
    initial_b = fields.Nested(InitialLawSchema, allow_none=True)

    # N ladders (contraction, chaos, deviation)
    n_ladder = fields.List(fields.Integer(validate=validate.Range(min=1)), allow_none=True,
                           validate=validate.Length(min=1))

    # chaos
    mode = fields.String(allow_none=True, validate=validate.OneOf(['auto', 'exact', 'proxy']))
    proxy_m = fields.Integer(allow_none=True, validate=validate.Range(min=0))
    mean_scheme = fields.String(allow_none=True, validate=validate.OneOf(['euler', 'exact']))
    check_time_uniformity = fields.Boolean(allow_none=True)

    # deviation
    observable = fields.String(allow_none=True, validate=validate_observable)
    radii = fields.List(fields.Float(validate=validate.Range(min=0)), allow_none=True)
    min_tail_count = fields.Integer(allow_none=True, validate=validate.Range(min=1))
    reference_N = fields.Integer(allow_none=True, validate=validate.Range(min=2))
    reference_T = fields.Float(allow_none=True, validate=validate.Range(min=0))
    check_centering = fields.Boolean(allow_none=True)

    # exact transport subsample (equilibrium, contraction)
    ot_sample = fields.Integer(allow_none=True, validate=validate.Range(min=1))
    ot_replicas = fields.Integer(allow_none=True, validate=validate.Range(min=1))

    # simulate
    snapshot = fields.Boolean(allow_none=True)


@dataclass
class FieldSpec:
    kind: str = 'linear'
    alpha: float = 1.0
    alpha_prime: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    delta: float = 0.0
    dim: int = 1
    offset: float = 0.0

    def coefficients(self) -> Coefficients:
        return Coefficients(self.alpha, self.alpha_prime, self.beta, self.gamma, self.delta, self.dim)


@dataclass
class SimSpec:
    N: Optional[int] = None
    dt: Optional[float] = None
    T: Optional[float] = None
    stride: Optional[int] = None
    seed: Optional[int] = None
    replicas: Optional[int] = None


@dataclass
class ExperimentSpec:
    name: Optional[str] = None
    knobs: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunConfig:
    field: FieldSpec
    sim: SimSpec
    experiment: ExperimentSpec
    output_dir: str

    def to_dict(self) -> Dict[str, Any]:
        experiment = {'name': self.experiment.name}
        experiment.update(self.experiment.knobs)
        return {
            'output_dir': self.output_dir,
            'field': asdict(self.field),
            'sim': asdict(self.sim),
            'experiment': experiment,
        }


class RunConfigSchema(Schema):
    class Meta:
        unknown = RAISE
        ordered = True

    output_dir = fields.String(load_default=None, allow_none=True)
    field = fields.Nested(FieldSchema, load_default=dict)
    sim = fields.Nested(SimSchema, load_default=dict)
    experiment = fields.Nested(ExperimentSchema, load_default=dict)

    @post_load
    def make_run_config(self, data, **kwargs):
        experiment = dict(data['experiment'])
        name = experiment.pop('name', None)
        knobs = {key: value for key, value in experiment.items() if value is not None}
        return RunConfig(
            field=FieldSpec(**data['field']),
            sim=SimSpec(**data['sim']),
            experiment=ExperimentSpec(name=name, knobs=knobs),
            output_dir=data['output_dir'],
        )


run_config_schema = RunConfigSchema()
