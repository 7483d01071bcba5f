"""
Scoring functions f_theta over a flat parameter vector, and their plain-text codec
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from .dataset import make_rng
from .errors import DataError

logger = logging.getLogger(__name__)

LINEAR = 'linear'
MLP = 'mlp'

_MODEL_MAGIC = 'pairfair-model v1'
_STOCHASTIC_MAGIC = 'pairfair-stochastic-model v1'
SIMPLEX_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in (LINEAR, MLP):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == MLP and self.hidden < 1:
            raise ValueError("an mlp needs at least one hidden unit")
        if self.kind == LINEAR and self.hidden:
            object.__setattr__(self, 'hidden', 0)

    @property
    def num_params(self) -> int:
        if self.kind == LINEAR:
            return self.input_dim + 1
        return (self.input_dim + 1) * self.hidden + self.hidden + 1


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable (spec, theta) value.

    Linear layout: [w, b]. MLP layout: [W (hidden x dim, row-major), c, v, b]
    for f(x) = v . relu(W x + c) + b.
    """
    spec: ModelSpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.spec.num_params,):
            raise ValueError(f"theta has {theta.size} entries, {self.spec.kind} spec needs {self.spec.num_params}")
        theta.setflags(write=False)
        object.__setattr__(self, 'theta', theta)

    def with_theta(self, theta: np.ndarray) -> 'Model':
        return Model(self.spec, theta)

    def _unpack(self):
        d, h = self.spec.input_dim, self.spec.hidden
        t = self.theta
        weights = t[:h * d].reshape(h, d)
        hidden_bias = t[h * d:h * d + h]
        output = t[h * d + h:h * d + 2 * h]
        return weights, hidden_bias, output, t[-1]

    def _check(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.spec.input_dim:
            raise DataError(f"model expects {self.spec.input_dim} features, got {features.shape[-1]}")
        return features

    def scores(self, features: np.ndarray) -> np.ndarray:
        """Scores of every row of an (n, dim) matrix"""
        features = self._check(features).reshape(-1, self.spec.input_dim)
        if self.spec.kind == LINEAR:
            return features @ self.theta[:-1] + self.theta[-1]
        weights, hidden_bias, output, bias = self._unpack()
        return np.maximum(features @ weights.T + hidden_bias, 0.0) @ output + bias

    def score(self, features: Sequence[float]) -> float:
        return float(self.scores(np.asarray(features, dtype=float)[None, :])[0])

    def gradient(self, features: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """Gradient over theta of sum_e coef[e] * f(features[e])"""
        features = self._check(features).reshape(-1, self.spec.input_dim)
        coef = np.asarray(coef, dtype=float)
        if self.spec.kind == LINEAR:
            return np.concatenate([features.T @ coef, [coef.sum()]])

        weights, hidden_bias, output, _ = self._unpack()
        pre = features @ weights.T + hidden_bias
        active = np.maximum(pre, 0.0)
        d_pre = np.outer(coef, output) * (pre > 0)
        return np.concatenate([
            (d_pre.T @ features).ravel(),
            d_pre.sum(axis=0),
            active.T @ coef,
            [coef.sum()],
        ])

    def score_diff_gradient(self, x: Sequence[float], x_other: Sequence[float]) -> np.ndarray:
        """Gradient over theta of f(x) - f(x')"""
        return self.gradient(np.vstack([self._check(x), self._check(x_other)]), np.array([1.0, -1.0]))


def init(spec: ModelSpec, seed: int = 0) -> Model:
    """Zero linear weights; mlp weights uniform in +-1/sqrt(fan_in) with zero biases"""
    if spec.kind == LINEAR:
        return Model(spec, np.zeros(spec.num_params))
    rng = make_rng(seed)
    d, h = spec.input_dim, spec.hidden
    weights = rng.uniform(-1.0, 1.0, size=h * d) / np.sqrt(max(d, 1))
    output = rng.uniform(-1.0, 1.0, size=h) / np.sqrt(h)
    return Model(spec, np.concatenate([weights, np.zeros(h), output, [0.0]]))


@dataclass(frozen=True, eq=False)
class StochasticModel:
    """Finite mixture of models; metrics of the mixture are expectations over draws"""
    models: Tuple[Model, ...]
    probabilities: np.ndarray = field(default=None)

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ValueError("a stochastic model needs at least one atom")
        probs = self.probabilities
        probs = np.full(len(models), 1.0 / len(models)) if probs is None else np.asarray(probs, dtype=float)
        if probs.shape != (len(models),):
            raise ValueError(f"{len(models)} models but {probs.size} probabilities")
        if np.any(probs < -SIMPLEX_TOLERANCE) or abs(probs.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"probabilities {probs} are not on the simplex")
        object.__setattr__(self, 'models', models)
        object.__setattr__(self, 'probabilities', probs)

    @classmethod
    def deterministic(cls, model: Model) -> 'StochasticModel':
        return cls((model,), np.ones(1))

    @property
    def atoms(self) -> List[Tuple[Model, float]]:
        return list(zip(self.models, self.probabilities.tolist()))

    def sample(self, rng: np.random.Generator) -> Model:
        return self.models[int(rng.choice(len(self.models), p=self.probabilities))]


def _format_block(model: Model) -> List[str]:
    spec = model.spec
    lines = [f"kind {spec.kind}", f"input_dim {spec.input_dim}", f"hidden {spec.hidden}",
             f"theta {spec.num_params}"]
    lines.extend(format(float(v), '.17g') for v in model.theta)
    return lines


def _parse_block(lines: List[str], pos: int) -> Tuple[Model, int]:
    def field_value(name: str) -> str:
        nonlocal pos
        key, _, value = lines[pos].partition(' ')
        if key != name:
            raise DataError(f"model file line {pos + 1}: expected {name!r}, got {lines[pos]!r}")
        pos += 1
        return value

    spec = ModelSpec(kind=field_value('kind'), input_dim=int(field_value('input_dim')),
                     hidden=int(field_value('hidden')))
    count = int(field_value('theta'))
    theta = np.array([float(v) for v in lines[pos:pos + count]])
    if theta.size != count:
        raise DataError(f"model file truncated: expected {count} parameters")
    return Model(spec, theta), pos + count


def dumps(artifact: Union[Model, StochasticModel]) -> str:
    """Plain-text codec; parameters at 17 significant digits round-trip exactly"""
    if isinstance(artifact, Model):
        return '\n'.join([_MODEL_MAGIC] + _format_block(artifact)) + '\n'
    lines = [_STOCHASTIC_MAGIC, f"atoms {len(artifact.models)}"]
    for model, probability in artifact.atoms:
        lines.append(f"probability {format(probability, '.17g')}")
        lines.extend(_format_block(model))
    return '\n'.join(lines) + '\n'


def loads(text: str) -> Union[Model, StochasticModel]:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataError("empty model file")
    try:
        if lines[0] == _MODEL_MAGIC:
            model, _ = _parse_block(lines, 1)
            return model
        if lines[0] == _STOCHASTIC_MAGIC:
            count = int(lines[1].partition(' ')[2])
            pos, models, probs = 2, [], []
            for _ in range(count):
                key, _, value = lines[pos].partition(' ')
                if key != 'probability':
                    raise DataError(f"model file line {pos + 1}: expected 'probability'")
                probs.append(float(value))
                model, pos = _parse_block(lines, pos + 1)
                models.append(model)
            return StochasticModel(tuple(models), np.array(probs))
    except (IndexError, ValueError) as e:
        raise DataError(f"malformed model file: {e}")
    raise DataError(f"unrecognized model file header {lines[0]!r}")


def save(artifact: Union[Model, StochasticModel], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps(artifact))


def load(path: str) -> Union[Model, StochasticModel]:
    try:
        with open(path, encoding='utf-8') as f:
            return loads(f.read())
    except OSError as e:
        raise DataError(f"cannot read model {path}: {e}")
