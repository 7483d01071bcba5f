"""
Solver primitives: configuration, snapshots, Adam, swap-regret lambda dynamics,
shrinking to a sparse stochastic model and step-size selection
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, SolverError
from .model import Model, StochasticModel
from .simplex import linprog_max

logger = logging.getLogger(__name__)

DEFAULT_STEP_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
FEASIBILITY_MARGIN = 0.01
STATIONARY_TOLERANCE = 1e-8
STATIONARY_MAX_ITERATIONS = 10000
SWAP_REGRET_SHARE = 1e-3


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 2500
    eta_theta: Optional[float] = None
    eta_lambda: Optional[float] = None
    step_grid: Tuple[float, ...] = DEFAULT_STEP_GRID
    snapshots: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    minibatch: Optional[int] = None
    workers: Optional[int] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"solver.iterations must be >= 1, got {self.iterations}")
        if not 1 <= self.snapshots <= self.iterations:
            raise ConfigError(f"solver.snapshots must be in [1, {self.iterations}], got {self.snapshots}")
        rates = [r for r in (self.eta_theta, self.eta_lambda) if r is not None] + list(self.step_grid)
        if not rates or any(r <= 0 for r in rates):
            raise ConfigError("step sizes must be positive and the grid non-empty")
        if self.minibatch is not None and self.minibatch < 1:
            raise ConfigError("solver.minibatch must be positive")

    def grid(self) -> List[Tuple[float, float]]:
        """(eta_theta, eta_lambda) candidates; both rates share one value unless pinned"""
        if self.eta_theta is not None:
            return [(self.eta_theta, self.eta_lambda if self.eta_lambda is not None else self.eta_theta)]
        if self.eta_lambda is not None:
            return [(eta, self.eta_lambda) for eta in self.step_grid]
        return [(eta, eta) for eta in self.step_grid]

    def snapshot_iterations(self) -> np.ndarray:
        """`snapshots` evenly spaced iterations ending at the last one"""
        return np.unique(np.round(np.linspace(self.iterations / self.snapshots, self.iterations,
                                              self.snapshots)).astype(int))


@dataclass(frozen=True, eq=False)
class Snapshot:
    """One recorded iterate with exact validation metrics.

    `objective` is validation AUC (or -MSE); `deltas` the exact validation
    constraint differences (NaN when undefined); `accuracies` the validation
    accuracies of a robust goal.
    """
    iteration: int
    model: Model
    lam: np.ndarray
    train_objective: float
    objective: float
    deltas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accuracies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    violation: Optional[float] = None


class Adam:
    """Adam moments for a flat parameter vector; `step` ascends by default"""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    @classmethod
    def from_config(cls, size: int, lr: float, config: SolverConfig) -> 'Adam':
        return cls(size, lr, config.beta1, config.beta2, config.adam_epsilon)

    def step(self, params: np.ndarray, grad: np.ndarray, ascent: bool = True) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return params + update if ascent else params - update


@dataclass(frozen=True, eq=False)
class LambdaState:
    """Column-stochastic M and its stationary distribution lambda"""
    M: np.ndarray
    lam: np.ndarray

    @classmethod
    def initial(cls, m: int) -> 'LambdaState':
        size = m + 1
        return cls(M=np.full((size, size), 1.0 / size), lam=np.full(size, 1.0 / size))


def _solve_stationary(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    system = np.vstack([M - np.eye(n), np.ones((1, n))])
    rhs = np.concatenate([np.zeros(n), [1.0]])
    lam, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return np.maximum(lam, 0.0)


def stationary_distribution(M: np.ndarray) -> np.ndarray:
    """Fixed point of M on the simplex.

    Power iteration on the lazy chain A = (I + M) / 2 from the uniform
    vector; A has the fixed points of M and no periodic orbits. Squaring A
    doubles the step count each round, so STATIONARY_MAX_ITERATIONS steps
    take about log2 of that many rounds. Past the cap the linear system
    (M - I) lam = 0, sum(lam) = 1 is solved directly. For reducible M this is
    the fixed point reachable from uniform (for the identity, uniform itself).
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise SolverError("stationary distribution is undefined for a matrix with non-finite entries")
    n = M.shape[0]
    lam = np.full(n, 1.0 / n)
    A = 0.5 * (np.eye(n) + M)
    steps, power = 0, 1
    while steps < STATIONARY_MAX_ITERATIONS:
        lam = A @ lam
        lam /= lam.sum()
        steps += power
        if np.abs(M @ lam - lam).sum() <= STATIONARY_TOLERANCE:
            return lam
        A = A @ A
        power *= 2
    lam = _solve_stationary(M)
    if lam.sum() <= 0.0:
        raise SolverError("stationary distribution has no non-negative solution")
    lam /= lam.sum()
    residual = float(np.abs(M @ lam - lam).sum())
    if residual > STATIONARY_TOLERANCE:
        raise SolverError(f"stationary distribution did not converge (residual {residual:.3g})")
    return lam


def swap_regret_update(state: LambdaState, slack_gradient: np.ndarray, eta_lambda: float) -> LambdaState:
    """Exponentiated-gradient step on every column of M, weighted by lambda.

    Entry (i, j) is multiplied by exp(eta * g_i * lambda_j), columns are
    renormalized and mixed with the uniform column (fixed share), so every
    entry stays at least SWAP_REGRET_SHARE / (m + 1). The new lambda is the
    stationary distribution of M.
    """
    g = np.asarray(slack_gradient, dtype=float)
    if g.shape != state.lam.shape:
        raise ValueError(f"slack gradient has {g.size} entries, lambda has {state.lam.size}")
    if not np.all(np.isfinite(g)):
        raise SolverError("slack gradient has non-finite entries")
    if not np.any(g):
        return state
    exponent = eta_lambda * np.outer(g, state.lam)
    exponent -= exponent.max(axis=0, keepdims=True)
    M = state.M * np.exp(exponent)
    M /= M.sum(axis=0, keepdims=True)
    M = (1.0 - SWAP_REGRET_SHARE) * M + SWAP_REGRET_SHARE / M.shape[0]
    return LambdaState(M=M, lam=stationary_distribution(M))


def _stochastic(snapshots: Sequence[Snapshot], probabilities: np.ndarray) -> StochasticModel:
    probabilities = np.maximum(probabilities, 0.0)
    support = np.flatnonzero(probabilities > 1e-12)
    p = probabilities[support] / probabilities[support].sum()
    return StochasticModel(tuple(snapshots[k].model for k in support), p)


def shrink(snapshots: Sequence[Snapshot], epsilon: float) -> StochasticModel:
    """Best mixture of snapshots whose expected validation differences stay within epsilon.

    Solves max sum_t p_t objective_t s.t. sum_t p_t Delta_{c,t} <= epsilon, p on
    the simplex; the basic optimum has at most J+1 atoms. Constraints undefined
    on some snapshot are left out.
    """
    if not snapshots:
        raise ValueError("shrinking needs at least one snapshot")
    objectives = np.array([s.objective for s in snapshots])
    deltas = np.array([s.deltas for s in snapshots], dtype=float)
    defined = ~np.isnan(deltas).any(axis=0)
    if not defined.all():
        logger.warning("Shrinking ignores %d constraint(s) undefined on validation", int((~defined).sum()))
    deltas = deltas[:, defined]

    p, _ = linprog_max(
        objectives,
        A_ub=deltas.T, b_ub=np.full(deltas.shape[1], epsilon),
        A_eq=np.ones((1, len(snapshots))), b_eq=np.ones(1),
    )
    return _stochastic(snapshots, p)


def shrink_robust(snapshots: Sequence[Snapshot], term_of_accuracy: Sequence[int]) -> StochasticModel:
    """Mixture maximizing the sum over goal terms of the smallest expected validation accuracy.

    LP over (p, xi): max sum_g xi_g s.t. xi_g <= sum_t p_t A_{c,t} for every
    accuracy c of term g; basic optima keep at most J+1 atoms.
    """
    if not snapshots:
        raise ValueError("shrinking needs at least one snapshot")
    accuracies = np.array([s.accuracies for s in snapshots])  # (T, J)
    accuracies = np.nan_to_num(accuracies, nan=0.0)
    terms = np.asarray(term_of_accuracy)
    n_terms = int(terms.max()) + 1
    T, J = accuracies.shape

    A_ub = np.zeros((J, T + n_terms))
    A_ub[:, :T] = -accuracies.T
    A_ub[np.arange(J), T + terms] = 1.0
    A_eq = np.zeros((1, T + n_terms))
    A_eq[0, :T] = 1.0
    c = np.concatenate([np.zeros(T), np.ones(n_terms)])
    x, _ = linprog_max(c, A_ub=A_ub, b_ub=np.zeros(J), A_eq=A_eq, b_eq=np.ones(1))
    return _stochastic(snapshots, x[:T])


def fallback_snapshot(snapshots: Sequence[Snapshot]) -> StochasticModel:
    """Single snapshot with the smallest validation violation (first on ties)"""
    violations = [np.inf if s.violation is None else s.violation for s in snapshots]
    return StochasticModel.deterministic(snapshots[int(np.argmin(violations))].model)


@dataclass(frozen=True)
class RunSummary:
    """What step-size selection needs to know about one run"""
    objective: float
    violation: Optional[float] = None


def select_step_size(runs: Sequence[RunSummary], epsilon: Optional[float] = None) -> int:
    """Index of the chosen run.

    Without epsilon: highest validation objective (AUC, or -MSE). With
    epsilon: highest objective among runs with violation <= epsilon + 0.01,
    else the run with the smallest violation. Runs whose violation is
    undefined rank after every run with a defined one.
    """
    if not runs:
        raise ValueError("no runs to select from")
    objectives = np.array([r.objective for r in runs], dtype=float)
    objectives = np.where(np.isnan(objectives), -np.inf, objectives)
    if epsilon is None:
        return int(np.argmax(objectives))
    violations = np.array([np.inf if r.violation is None else r.violation for r in runs], dtype=float)
    violations = np.where(np.isnan(violations), np.inf, violations)
    feasible = np.flatnonzero(violations <= epsilon + FEASIBILITY_MARGIN)
    if feasible.size:
        return int(feasible[np.argmax(objectives[feasible])])
    if np.all(np.isinf(violations)):
        logger.warning("No run has a defined validation violation; picking the best objective")
        return int(np.argmax(objectives))
    logger.warning("No step size meets the constraints on validation; picking the smallest violation")
    return int(np.argmin(violations))


RUN_LOG_COLUMNS = ('iteration', 'lambda', 'train_objective', 'validation_objective', 'violation', 'deltas')
FINAL_ROW = 'final'


def _fmt(value: Optional[float]) -> str:
    if value is None or np.isnan(value):
        return 'nan'
    return f"{value:.6f}"


def format_run_log(snapshots: Sequence[Snapshot], final_objective: Optional[float],
                   final_violation: Optional[float]) -> str:
    """Tab-separated run log: a header, one row per snapshot and a closing `final` row.

    The final row carries the expected validation objective (AUC, or -MSE) and
    violation of the returned model, as `evaluate` reports them.
    """
    lines = ['\t'.join(RUN_LOG_COLUMNS)]
    for s in snapshots:
        lines.append('\t'.join([
            str(s.iteration),
            ','.join(_fmt(v) for v in s.lam),
            _fmt(s.train_objective),
            _fmt(s.objective),
            _fmt(s.violation),
            ','.join(_fmt(d) for d in s.deltas) or '-',
        ]))
    lines.append('\t'.join([FINAL_ROW, '-', '-', _fmt(final_objective), _fmt(final_violation), '-']))
    return '\n'.join(lines) + '\n'


def parse_run_log(text: str) -> List[Dict[str, str]]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split('\t')) != RUN_LOG_COLUMNS:
        raise DataError("run log header is missing or malformed")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split('\t')
        if len(fields) != len(RUN_LOG_COLUMNS):
            raise DataError(f"run log line {number}: expected {len(RUN_LOG_COLUMNS)} fields, got {len(fields)}")
        rows.append(dict(zip(RUN_LOG_COLUMNS, fields)))
    if not rows or rows[-1]['iteration'] != FINAL_ROW:
        raise DataError("run log has no final row")
    return rows
