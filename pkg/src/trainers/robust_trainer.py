import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .base_trainer import BaseTrainer, RunResult, RunState, expected_report
from ..dataset import RANKING, Dataset
from ..errors import ConfigError
from ..metrics import AccuracyRef
from ..model import Model
from ..solver import Adam, LambdaState, Snapshot, shrink_robust, swap_regret_update
from ..surrogate import PairProblem, lower_rate

logger = logging.getLogger(__name__)


class RobustTrainer(BaseTrainer):
    """Maximizes a sum of minima of pairwise accuracies.

    Each term g gets a slack xi_g appended to theta; the game enforces
    xi_g <= A_c for every accuracy c of the term, with lower hinges on A_c for
    the theta-player and exact accuracies for the lambda-player.
    """

    method = 'robust'

    def __init__(self, *args, terms: Optional[Sequence[Tuple[AccuracyRef, ...]]] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.terms_override = list(terms) if terms else None

    def prepare(self, dataset: Dataset) -> Tuple[PairProblem, PairProblem]:
        if dataset.task != RANKING:
            raise ConfigError("robust optimization is defined for ranking tasks only")
        if self.fairness is None and self.terms_override is None:
            raise ConfigError("robust training needs a fairness criterion")
        train, validation = super().prepare(dataset)
        self.terms = self.terms_override or self.fairness.robust_terms(dataset.num_groups)
        self.accuracy_refs = [ref for term in self.terms for ref in term]
        self.term_of = np.array([g for g, term in enumerate(self.terms) for _ in term])
        self.active = np.ones(len(self.accuracy_refs), dtype=bool)
        for c, ref in enumerate(self.accuracy_refs):
            if len(train.bind(ref)[1]) == 0:
                logger.warning("Accuracy %s has no training pairs and is left out of the goal", ref)
                self.active[c] = False
        return train, validation

    @property
    def num_terms(self) -> int:
        return len(self.terms)

    def start(self, model: Model, eta_theta: float, eta_lambda: float) -> RunState:
        size = model.spec.num_params + self.num_terms
        return RunState(model=model, adam=Adam.from_config(size, eta_theta, self.config), eta_lambda=eta_lambda,
                        lam=LambdaState.initial(len(self.accuracy_refs)), xi=np.zeros(self.num_terms))

    def step(self, state: RunState, batch: PairProblem) -> None:
        model, xi, lam = state.model, state.xi, state.lam.lam
        scores = model.scores(batch.features)
        table = batch.report(scores).table()

        coef = np.zeros(len(scores))
        grad_xi = np.full(self.num_terms, lam[0])
        slacks = np.zeros(len(lam))
        for c, ref in enumerate(self.accuracy_refs):
            if not self.active[c]:
                continue
            g = self.term_of[c]
            _, rate_coef = lower_rate(scores, batch, ref)
            coef += lam[c + 1] * rate_coef
            grad_xi[g] -= lam[c + 1]
            exact = table.accuracy(ref)
            if exact is not None:
                slacks[c + 1] = xi[g] - exact

        grad = np.concatenate([model.gradient(batch.features, coef), grad_xi])
        params = state.adam.step(np.concatenate([model.theta, xi]), grad)
        state.model = model.with_theta(params[:-self.num_terms])
        state.xi = params[-self.num_terms:]
        state.lam = swap_regret_update(state.lam, slacks, state.eta_lambda)

    def goal(self, table) -> float:
        """Sum over terms of the smallest defined accuracy"""
        total = 0.0
        for term in self.terms:
            values = [table.accuracy(ref) for ref in term]
            values = [v for v in values if v is not None]
            total += min(values) if values else 0.0
        return total

    def finish(self, snapshots: List[Snapshot], validation: PairProblem, eta_theta: float,
               eta_lambda: float, seed: int) -> RunResult:
        smodel = shrink_robust(snapshots, self.term_of)
        report, _ = expected_report(smodel, validation)
        table = report.table()
        return RunResult(eta_theta=eta_theta, eta_lambda=eta_lambda, seed=seed, artifact=smodel,
                         snapshots=snapshots, objective=self.goal(table), violation=self.violation_of(table))
