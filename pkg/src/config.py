"""
Run configuration: a flat file of dotted keys (solver.iterations=2500)

Values come from the file, then from PAIRFAIR_<KEY> environment variables
(dots written as double underscores, a local .env file is honoured), then
from command-line overrides.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .dataset import RANKING, TASKS, CsvSchema, Dataset, load_csv, split
from .errors import ConfigError
from .metrics import FairnessSpec
from .model import LINEAR, MLP, ModelSpec
from .simgen import GENERATORS, GROUP_COUNTS
from .solver import DEFAULT_STEP_GRID, SolverConfig

logger = logging.getLogger(__name__)

METHODS = ('unconstrained', 'debiased', 'constrained', 'robust')
ENV_PREFIX = 'PAIRFAIR_'

KNOWN_KEYS = (
    'method',
    'data.path', 'data.task', 'data.groups', 'data.continuous', 'data.label_column', 'data.query_column',
    'data.group_column', 'data.attribute_column', 'data.feature_columns', 'data.max_pairs', 'data.seed',
    'simulate.generator', 'simulate.queries', 'simulate.seed',
    'model.kind', 'model.hidden',
    'fairness.criterion', 'fairness.epsilon',
    'solver.iterations', 'solver.eta_theta', 'solver.eta_lambda', 'solver.step_grid', 'solver.snapshots',
    'solver.seed', 'solver.minibatch', 'solver.workers',
    'output.dir',
)


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace('.', '__')


class _Values:
    """Typed accessors that name the offending key on bad input"""

    def __init__(self, values: Mapping[str, Optional[str]]):
        self.values = {k: (v or '').strip() for k, v in values.items()}

    def text(self, key: str, default: Optional[str] = None) -> Optional[str]:
        value = self.values.get(key, '')
        return value if value != '' else default

    def integer(self, key: str, default: Optional[int] = None) -> Optional[int]:
        value = self.text(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")

    def real(self, key: str, default: Optional[float] = None) -> Optional[float]:
        value = self.text(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}")

    def boolean(self, key: str, default: bool = False) -> bool:
        value = self.text(key)
        if value is None:
            return default
        if value.lower() in ('1', 'true', 'yes', 'on'):
            return True
        if value.lower() in ('0', 'false', 'no', 'off'):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")

    def reals(self, key: str, default: Tuple[float, ...]) -> Tuple[float, ...]:
        value = self.text(key)
        if value is None:
            return default
        try:
            return tuple(float(v) for v in value.split(',') if v.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    method: str = 'unconstrained'
    data_path: Optional[str] = None
    schema: CsvSchema = field(default_factory=CsvSchema)
    max_pairs: Optional[int] = None
    data_seed: int = 0
    generator: Optional[str] = None
    queries: int = 5000
    simulate_seed: int = 0
    model_kind: str = LINEAR
    hidden: int = 0
    fairness: Optional[FairnessSpec] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = 'runs'

    @property
    def num_groups(self) -> int:
        return GROUP_COUNTS[self.generator] if self.generator else self.schema.num_groups

    @property
    def continuous(self) -> bool:
        return False if self.generator else self.schema.continuous

    @property
    def task(self) -> str:
        return RANKING if self.generator else self.schema.task

    def model_spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(kind=self.model_kind, input_dim=input_dim, hidden=self.hidden)

    def load_dataset(self) -> Dataset:
        """The configured dataset, split with the data seed"""
        if self.generator:
            dataset = GENERATORS[self.generator](self.queries, self.simulate_seed)
        else:
            dataset = load_csv(self.data_path, self.schema)
        return split(dataset, self.data_seed)

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> 'RunConfig':
        config = self
        if seed is not None:
            config = replace(config, data_seed=seed, solver=replace(config.solver, seed=seed))
        if output_dir is not None:
            config = replace(config, output_dir=output_dir)
        return config

    def to_dict(self) -> Dict:
        return {
            'method': self.method,
            'data': {'path': self.data_path, 'generator': self.generator, 'task': self.task,
                     'groups': self.num_groups, 'continuous': self.continuous,
                     'max_pairs': self.max_pairs, 'seed': self.data_seed},
            'model': {'kind': self.model_kind, 'hidden': self.hidden},
            'fairness': None if self.fairness is None else {'criterion': self.fairness.criterion,
                                                            'epsilon': self.fairness.epsilon},
            'solver': {'iterations': self.solver.iterations, 'snapshots': self.solver.snapshots,
                       'step_grid': list(self.solver.step_grid), 'seed': self.solver.seed,
                       'minibatch': self.solver.minibatch},
        }


def parse_config(raw: Mapping[str, Optional[str]], base_dir: str = '.') -> RunConfig:
    """Validate a flat key/value mapping into a RunConfig"""
    unknown = sorted(k for k in raw if k not in KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    values = _Values(raw)

    method = values.text('method', 'unconstrained')
    if method not in METHODS:
        raise ConfigError(f"method: expected one of {', '.join(METHODS)}, got {method!r}")

    data_path = values.text('data.path')
    generator = values.text('simulate.generator')
    if bool(data_path) == bool(generator):
        raise ConfigError("exactly one of data.path and simulate.generator must be set")
    if generator and generator not in GENERATORS:
        raise ConfigError(f"simulate.generator: expected one of {', '.join(GENERATORS)}, got {generator!r}")
    if data_path and not os.path.isabs(data_path):
        data_path = os.path.normpath(os.path.join(base_dir, data_path))

    task = values.text('data.task', RANKING)
    if task not in TASKS:
        raise ConfigError(f"data.task: expected one of {', '.join(TASKS)}, got {task!r}")
    feature_columns = values.text('data.feature_columns')
    schema = CsvSchema(
        task=task,
        num_groups=values.integer('data.groups', 0),
        continuous=values.boolean('data.continuous'),
        label_column=values.text('data.label_column', 'label'),
        query_column=values.text('data.query_column', 'query_id'),
        group_column=values.text('data.group_column', 'group'),
        attribute_column=values.text('data.attribute_column', 'attribute'),
        feature_columns=tuple(c.strip() for c in feature_columns.split(',')) if feature_columns else None,
    )
    if schema.num_groups < 0 or schema.num_groups == 1:
        raise ConfigError(f"data.groups: expected 0 or at least 2, got {schema.num_groups}")

    model_kind = values.text('model.kind', LINEAR)
    if model_kind not in (LINEAR, MLP):
        raise ConfigError(f"model.kind: expected linear or mlp, got {model_kind!r}")
    hidden = values.integer('model.hidden', 0)
    if model_kind == MLP and hidden < 1:
        raise ConfigError("model.hidden: an mlp needs at least one hidden unit")

    iterations = values.integer('solver.iterations', 2500)
    solver = SolverConfig(
        iterations=iterations,
        eta_theta=values.real('solver.eta_theta'),
        eta_lambda=values.real('solver.eta_lambda'),
        step_grid=values.reals('solver.step_grid', DEFAULT_STEP_GRID),
        snapshots=values.integer('solver.snapshots', min(100, iterations)),
        seed=values.integer('solver.seed', 0),
        minibatch=values.integer('solver.minibatch'),
        workers=values.integer('solver.workers'),
    )

    config = RunConfig(
        method=method,
        data_path=data_path,
        schema=schema,
        max_pairs=values.integer('data.max_pairs'),
        data_seed=values.integer('data.seed', 0),
        generator=generator,
        queries=values.integer('simulate.queries', 5000),
        simulate_seed=values.integer('simulate.seed', 0),
        model_kind=model_kind,
        hidden=hidden,
        solver=solver,
        output_dir=values.text('output.dir', 'runs'),
    )

    criterion = values.text('fairness.criterion')
    if criterion:
        fairness = FairnessSpec(criterion, values.real('fairness.epsilon', 0.0))
        fairness.check_compatible(config.num_groups, config.continuous)
        config = replace(config, fairness=fairness)
    elif method in ('constrained', 'robust'):
        raise ConfigError(f"method {method} needs fairness.criterion")
    if method == 'debiased' and config.num_groups != 2:
        raise ConfigError("method debiased needs a dataset with exactly two groups")
    return config


def load_config(path: str, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Read `path`, apply PAIRFAIR_* environment overrides and validate"""
    if not os.path.isfile(path):
        raise ConfigError(f"{path}: no such configuration file")
    raw = dict(dotenv_values(path))
    if environ is None:
        load_dotenv()
        environ = os.environ
    for key in KNOWN_KEYS:
        name = env_name(key)
        if name in environ:
            logger.debug("Configuration key %s overridden by %s", key, name)
            raw[key] = environ[name]
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))
