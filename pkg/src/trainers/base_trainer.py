from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union
import asyncio
import logging

import numpy as np

from ..dataset import RANKING, TRAIN, VALIDATION, Dataset, enumerate_pairs, enumerate_parity_pairs, make_rng
from ..errors import DataError, SolverError
from ..metrics import AccuracyRef, AccuracyTable, FairnessSpec, PairReport, correct_pairs
from ..model import Model, ModelSpec, StochasticModel, init
from ..solver import Adam, LambdaState, RunSummary, Snapshot, SolverConfig, select_step_size
from ..surrogate import ConstraintSet, PairProblem, objective_scores

logger = logging.getLogger(__name__)


def expected_report(smodel: StochasticModel, problem: PairProblem) -> Tuple[PairReport, Optional[float]]:
    """Exact expected pair metrics of a mixture on one problem, plus expected MSE for regression"""
    pairs, parity_pairs = problem.pairs, problem.parity_pairs
    correct = np.zeros(len(pairs))
    higher = lower = None
    if parity_pairs is not None:
        higher, lower = np.zeros(len(parity_pairs)), np.zeros(len(parity_pairs))
    mse = None if problem.task == RANKING else 0.0
    for model, probability in smodel.atoms:
        scores = model.scores(problem.features)
        correct += probability * correct_pairs(scores, pairs)
        if parity_pairs is not None:
            higher += probability * (scores[parity_pairs.better] > scores[parity_pairs.worse])
            lower += probability * (scores[parity_pairs.worse] > scores[parity_pairs.better])
        if mse is not None:
            mse += probability * float(np.mean((scores - problem.labels) ** 2))
    report = PairReport.from_correct(correct, pairs, problem.num_groups, higher, lower, parity_pairs)
    return report, mse


@dataclass
class RunState:
    """Mutable iterate of one training run"""
    model: Model
    adam: Adam
    eta_lambda: float
    lam: Optional[LambdaState] = None
    xi: Optional[np.ndarray] = None


@dataclass
class RunResult:
    eta_theta: float
    eta_lambda: float
    seed: int
    artifact: Union[Model, StochasticModel]
    snapshots: List[Snapshot]
    objective: float
    violation: Optional[float] = None
    fallback: bool = False

    @property
    def stochastic(self) -> StochasticModel:
        if isinstance(self.artifact, Model):
            return StochasticModel.deterministic(self.artifact)
        return self.artifact

    def summary(self) -> RunSummary:
        return RunSummary(objective=self.objective, violation=self.violation)


@dataclass
class TrainingResult:
    method: str
    runs: List[RunResult]
    chosen: int
    failed: Dict[float, str] = field(default_factory=dict)
    extra: Dict = field(default_factory=dict)

    @property
    def best(self) -> RunResult:
        return self.runs[self.chosen]

    @property
    def fallback(self) -> bool:
        return self.best.fallback

    def hyperparameters(self) -> Dict:
        return {
            'method': self.method,
            'eta_theta': self.best.eta_theta,
            'eta_lambda': self.best.eta_lambda,
            'seed': self.best.seed,
            'fallback': self.best.fallback,
            'grid': [
                {
                    'eta_theta': run.eta_theta,
                    'eta_lambda': run.eta_lambda,
                    'validation_objective': run.objective,
                    'validation_violation': run.violation,
                }
                for run in self.runs
            ],
            'failed': {f"{eta:g}": msg for eta, msg in self.failed.items()},
            **self.extra,
        }


class BaseTrainer(ABC):
    """Step-size grid search around one training algorithm.

    Subclasses provide a single Adam step; the base class owns the pair
    problems, snapshotting with exact validation metrics and run selection.
    """

    method = ''

    def __init__(self, model_spec: ModelSpec, config: SolverConfig, fairness: Optional[FairnessSpec] = None,
                 max_pairs: Optional[int] = None, data_seed: int = 0):
        self.model_spec = model_spec
        self.config = config
        self.fairness = fairness
        self.max_pairs = max_pairs
        self.data_seed = data_seed
        self.constraints: Optional[ConstraintSet] = None
        self.accuracy_refs: List[AccuracyRef] = []

    @property
    def needs_parity(self) -> bool:
        return self.fairness is not None and self.fairness.needs_parity

    def problem(self, dataset: Dataset, split: str) -> PairProblem:
        """Rows of `split` re-indexed from zero, with their pairs"""
        rows = dataset.restrict(split)
        pairs = enumerate_pairs(rows, max_pairs=self.max_pairs, seed=self.data_seed)
        parity = None
        if self.needs_parity:
            parity = enumerate_parity_pairs(rows, max_pairs=self.max_pairs, seed=self.data_seed)
        return PairProblem.from_dataset(rows, pairs, parity)

    def prepare(self, dataset: Dataset) -> Tuple[PairProblem, PairProblem]:
        if self.fairness is not None:
            self.fairness.check_compatible(dataset.num_groups, dataset.continuous)
            self.constraints = ConstraintSet.from_spec(self.fairness, dataset.num_groups)
        train, validation = self.problem(dataset, TRAIN), self.problem(dataset, VALIDATION)
        if dataset.task == RANKING and len(train.pairs) == 0:
            raise DataError("training split has no comparable pairs")
        if len(train.labels) == 0 or len(validation.labels) == 0:
            raise DataError("training and validation splits must both be non-empty")
        return train, validation

    def start(self, model: Model, eta_theta: float, eta_lambda: float) -> RunState:
        return RunState(model=model, adam=Adam.from_config(model.spec.num_params, eta_theta, self.config),
                        eta_lambda=eta_lambda)

    @abstractmethod
    def step(self, state: RunState, batch: PairProblem) -> None:
        """Advance `state` by one iteration on `batch`"""
        pass

    def snapshot(self, iteration: int, state: RunState, train: PairProblem,
                 validation: PairProblem) -> Snapshot:
        """Record the current model with exact validation metrics"""
        model = state.model
        train_objective, _ = objective_scores(model.scores(train.features), train)
        scores = model.scores(validation.features)
        table = validation.report(scores).table()
        if validation.task == RANKING:
            objective = table.accuracy(AccuracyRef('auc'))
            objective = float('nan') if objective is None else objective
        else:
            objective = -float(np.mean((scores - validation.labels) ** 2))

        values = self.constraint_deltas(table)
        deltas = np.array([np.nan if v is None else v for v in values])
        accuracies = np.array([np.nan if table.accuracy(r) is None else table.accuracy(r)
                               for r in self.accuracy_refs])
        lam = state.lam.lam.copy() if state.lam is not None else np.ones(1)
        return Snapshot(iteration=iteration, model=model, lam=lam, train_objective=train_objective,
                        objective=objective, deltas=deltas, accuracies=accuracies,
                        violation=self.violation_of(table))

    def constraint_deltas(self, table: AccuracyTable) -> List[Optional[float]]:
        if self.constraints is None:
            return []
        return [table.delta(c) for c in self.constraints.constraints]

    def violation_of(self, table: AccuracyTable) -> Optional[float]:
        """Largest defined constraint difference, None without constraints"""
        defined = [d for d in self.constraint_deltas(table) if d is not None]
        return max(defined) if defined else None

    def finish(self, snapshots: List[Snapshot], validation: PairProblem, eta_theta: float,
               eta_lambda: float, seed: int) -> RunResult:
        """Default: the final iterate"""
        last = snapshots[-1]
        return RunResult(eta_theta=eta_theta, eta_lambda=eta_lambda, seed=seed, artifact=last.model,
                         snapshots=snapshots, objective=last.objective, violation=last.violation)

    def selection_epsilon(self) -> Optional[float]:
        return None

    def run(self, train: PairProblem, validation: PairProblem, eta_theta: float, eta_lambda: float,
            seed: int) -> RunResult:
        """One single-threaded training run"""
        rng = make_rng(seed)
        state = self.start(init(self.model_spec, seed), eta_theta, eta_lambda)
        marks = set(int(t) for t in self.config.snapshot_iterations())
        snapshots = []
        for t in range(1, self.config.iterations + 1):
            batch = train.minibatch(rng, self.config.minibatch) if self.config.minibatch else train
            self.step(state, batch)
            if t in marks:
                snapshots.append(self.snapshot(t, state, train, validation))
        logger.debug("%s run eta_theta=%g eta_lambda=%g finished", self.method, eta_theta, eta_lambda)
        return self.finish(snapshots, validation, eta_theta, eta_lambda, seed)

    def run_seeds(self, count: int) -> List[int]:
        return [int(s) for s in make_rng(self.config.seed).integers(0, 2 ** 31 - 1, size=count)]

    async def fit_async(self, dataset: Dataset,
                        progress: Optional[Callable[[Optional[RunResult]], None]] = None) -> TrainingResult:
        """Run every grid point concurrently and keep the one chosen on validation"""
        train, validation = self.prepare(dataset)
        grid = self.config.grid()
        seeds = self.run_seeds(len(grid))
        semaphore = asyncio.Semaphore(self.config.workers or len(grid))

        failed: Dict[float, str] = {}

        async def one(k: int, eta_theta: float, eta_lambda: float) -> Optional[RunResult]:
            result = None
            async with semaphore:
                try:
                    result = await asyncio.to_thread(self.run, train, validation, eta_theta, eta_lambda, seeds[k])
                except SolverError as e:
                    failed[eta_theta] = str(e)
                    logger.warning("%s run eta_theta=%g eta_lambda=%g failed: %s", self.method, eta_theta,
                                   eta_lambda, e)
            if progress:
                progress(result)
            return result

        results = await asyncio.gather(*(one(k, eta_theta, eta_lambda)
                                         for k, (eta_theta, eta_lambda) in enumerate(grid)))
        runs = [r for r in results if r is not None]
        if not runs:
            details = "; ".join(f"eta={eta:g}: {msg}" for eta, msg in failed.items())
            raise SolverError(f"every step size failed: {details}")
        chosen = select_step_size([r.summary() for r in runs], self.selection_epsilon())
        logger.info("%s: chose eta_theta=%g eta_lambda=%g (validation objective %.4f)", self.method,
                    runs[chosen].eta_theta, runs[chosen].eta_lambda, runs[chosen].objective)
        return TrainingResult(method=self.method, runs=runs, chosen=chosen, failed=failed)

    def fit(self, dataset: Dataset,
            progress: Optional[Callable[[Optional[RunResult]], None]] = None) -> TrainingResult:
        return asyncio.run(self.fit_async(dataset, progress))
