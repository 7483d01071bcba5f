"""
Hinge surrogates of the pairwise rates and the two proxy-Lagrangian payoffs

Sign convention: the theta-player maximizes
    L_theta = lambda_1 * objective - sum_c lambda_{c+1} * (surrogate Delta_c - epsilon)
where the objective is the lower-bounding hinge AUC (ranking) or -MSE
(regression). The lambda-player sees the same expression with exact
indicators and puts weight on the constraints that are violated.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import GREATER, LESS, RANKING, Dataset, PairSet
from .metrics import AUC_REF, AccuracyRef, ConstraintDelta, FairnessSpec, PairReport
from .model import Model

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-9


def hinge_lower(d):
    """l(d) = 1 - max(0, 1 - d) <= 1[d > 0]; derivative 1 for d <= 1, else 0"""
    d = np.asarray(d, dtype=float)
    return np.minimum(d, 1.0), (d <= 1.0).astype(float)


def hinge_upper(d):
    """u(d) = max(0, 1 + d) >= 1[d > 0]; derivative 1 for d >= -1, else 0"""
    d = np.asarray(d, dtype=float)
    return np.maximum(1.0 + d, 0.0), (d >= -1.0).astype(float)


@dataclass(frozen=True, eq=False)
class PairProblem:
    """Rows of one split with their supervised (and optional parity) pairs"""
    features: np.ndarray
    labels: np.ndarray
    pairs: PairSet
    num_groups: int = 0
    task: str = RANKING
    parity_pairs: Optional[PairSet] = None
    _bound: Dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_dataset(cls, dataset: Dataset, pairs: PairSet,
                     parity_pairs: Optional[PairSet] = None) -> 'PairProblem':
        return cls(features=dataset.features, labels=dataset.labels, pairs=pairs,
                   num_groups=dataset.num_groups, task=dataset.task, parity_pairs=parity_pairs)

    def bind(self, ref: AccuracyRef) -> Tuple[PairSet, np.ndarray, float]:
        """(pair set, indices into it, orientation) whose rate equals `ref`"""
        if ref not in self._bound:
            pairs = self.pairs
            orientation = 1.0
            if ref.kind == 'auc':
                indices = np.arange(len(pairs))
            elif ref.kind == 'cell':
                indices = pairs.cell(ref.i, ref.j)
            elif ref.kind == 'row':
                indices = np.flatnonzero(pairs.row == ref.i)
            elif ref.kind == 'col':
                indices = np.flatnonzero(pairs.col == ref.i)
            elif ref.kind == 'greater':
                indices = pairs.tagged(GREATER)
            elif ref.kind == 'less':
                indices = pairs.tagged(LESS)
            elif ref.kind == 'parity':
                if self.parity_pairs is None:
                    raise ValueError("parity accuracies need parity pairs")
                pairs = self.parity_pairs
                indices = pairs.cell(min(ref.i, ref.j), max(ref.i, ref.j))
                orientation = 1.0 if ref.i < ref.j else -1.0
            else:
                raise ValueError(f"unknown accuracy kind {ref.kind!r}")
            self._bound[ref] = (pairs, indices, orientation)
        return self._bound[ref]

    def minibatch(self, rng: np.random.Generator, size: int) -> 'PairProblem':
        """Same rows, pairs thinned to a stratified per-cell batch"""
        parity = None if self.parity_pairs is None else self.parity_pairs.stratified_batch(rng, size)
        return PairProblem(features=self.features, labels=self.labels,
                           pairs=self.pairs.stratified_batch(rng, size),
                           num_groups=self.num_groups, task=self.task, parity_pairs=parity)

    def report(self, scores: np.ndarray) -> PairReport:
        return PairReport.from_scores(scores, self.pairs, self.num_groups, self.parity_pairs)


def _rate(scores: np.ndarray, problem: PairProblem, ref: AccuracyRef, hinge,
          weights: Optional[np.ndarray] = None, normalizer: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """Hinge rate of `ref` and its gradient over the per-example scores"""
    pairs, indices, orientation = problem.bind(ref)
    coef = np.zeros(len(scores))
    if len(indices) == 0:
        return float('nan'), coef
    better, worse = pairs.better[indices], pairs.worse[indices]
    d = orientation * (scores[better] - scores[worse])
    value, slope = hinge(d)
    w = np.ones(len(indices)) if weights is None else weights[indices]
    norm = float(len(indices)) if normalizer is None else normalizer
    per_pair = orientation * w * slope / norm
    coef += np.bincount(better, weights=per_pair, minlength=len(scores))
    coef -= np.bincount(worse, weights=per_pair, minlength=len(scores))
    return float(np.dot(w, value) / norm), coef


def lower_rate(scores, problem, ref, weights=None, normalizer=None):
    return _rate(scores, problem, ref, hinge_lower, weights, normalizer)


def upper_rate(scores, problem, ref):
    return _rate(scores, problem, ref, hinge_upper)


def surrogate_delta_scores(scores: np.ndarray, problem: PairProblem,
                           constraint: ConstraintDelta) -> Tuple[float, np.ndarray]:
    """Upper hinge on the positive side minus lower hinge on the negative side"""
    value, coef = 0.0, np.zeros(len(scores))
    for ref in constraint.positive:
        v, c = upper_rate(scores, problem, ref)
        value, coef = value + v, coef + c
    for ref in constraint.negative:
        v, c = lower_rate(scores, problem, ref)
        value, coef = value - v, coef - c
    return value, coef


def mse_objective(scores: np.ndarray, problem: PairProblem) -> Tuple[float, np.ndarray]:
    """-MSE and its gradient over the scores"""
    residual = scores - problem.labels
    n = len(residual)
    return -float(np.mean(residual ** 2)), -2.0 * residual / n


def surrogate_auc(model: Model, problem: PairProblem) -> Tuple[float, np.ndarray]:
    """Mean lower hinge over all pairs (never above the exact AUC) and its theta-gradient"""
    if len(problem.pairs) == 0:
        raise ValueError("surrogate AUC needs at least one pair")
    value, coef = lower_rate(model.scores(problem.features), problem, AUC_REF)
    return value, model.gradient(problem.features, coef)


def surrogate_delta(model: Model, problem: PairProblem,
                    constraint: ConstraintDelta) -> Optional[Tuple[float, np.ndarray]]:
    """Upper bound on Delta_c with its theta-gradient; None (with a warning) when a cell is empty"""
    for ref in constraint.positive + constraint.negative:
        if len(problem.bind(ref)[1]) == 0:
            logger.warning("Constraint %s is inactive: %s has no pairs", constraint.name, ref)
            return None
    value, coef = surrogate_delta_scores(model.scores(problem.features), problem, constraint)
    return value, model.gradient(problem.features, coef)


@dataclass(frozen=True)
class ConstraintSet:
    constraints: Tuple[ConstraintDelta, ...]
    epsilon: float = 0.0

    @classmethod
    def from_spec(cls, spec: FairnessSpec, num_groups: int) -> 'ConstraintSet':
        return cls(tuple(spec.constraints(num_groups)), spec.epsilon)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def active(self, problem: PairProblem) -> np.ndarray:
        """Mask of constraints whose cells all hold pairs in `problem`"""
        mask = np.ones(self.m, dtype=bool)
        for k, constraint in enumerate(self.constraints):
            empty = [str(r) for r in constraint.positive + constraint.negative if len(problem.bind(r)[1]) == 0]
            if empty:
                logger.warning("Constraint %s is inactive: no pairs in %s", constraint.name, ', '.join(empty))
                mask[k] = False
        return mask


def _check_simplex(lam: np.ndarray, size: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (size,) or np.any(lam < -SIMPLEX_TOLERANCE) or abs(lam.sum() - 1.0) > SIMPLEX_TOLERANCE:
        raise ValueError(f"lambda {lam} is not on the {size}-simplex")
    return lam


def objective_scores(scores: np.ndarray, problem: PairProblem,
                     weights: Optional[np.ndarray] = None,
                     normalizer: Optional[float] = None) -> Tuple[float, np.ndarray]:
    if problem.task == RANKING:
        return lower_rate(scores, problem, AUC_REF, weights, normalizer)
    return mse_objective(scores, problem)


def proxy_lagrangian_theta(model: Model, lam: np.ndarray, constraints: ConstraintSet,
                           problem: PairProblem, active: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Theta-player payoff (to be maximized) and its gradient"""
    lam = _check_simplex(lam, constraints.m + 1)
    scores = model.scores(problem.features)
    value, coef = objective_scores(scores, problem)
    value, coef = lam[0] * value, lam[0] * coef
    for k, constraint in enumerate(constraints.constraints):
        if lam[k + 1] == 0.0 or (active is not None and not active[k]):
            continue
        v, c = surrogate_delta_scores(scores, problem, constraint)
        value -= lam[k + 1] * (v - constraints.epsilon)
        coef = coef - lam[k + 1] * c
    return float(value), model.gradient(problem.features, coef)


def lagrangian_lambda(model: Model, constraints: ConstraintSet, problem: PairProblem) -> np.ndarray:
    """[0, Delta_1 - eps, ..., Delta_m - eps] from exact indicators; undefined constraints get 0"""
    table = problem.report(model.scores(problem.features)).table()
    slacks = np.zeros(constraints.m + 1)
    for k, constraint in enumerate(constraints.constraints):
        delta = table.delta(constraint)
        if delta is not None:
            slacks[k + 1] = delta - constraints.epsilon
    return slacks
