import logging
from typing import List, Optional, Tuple

from .base_trainer import BaseTrainer, RunResult, RunState, expected_report
from ..dataset import RANKING, Dataset
from ..errors import ConfigError, InfeasibleError
from ..model import Model
from ..solver import LambdaState, Snapshot, fallback_snapshot, shrink, swap_regret_update
from ..surrogate import PairProblem, lagrangian_lambda, proxy_lagrangian_theta

logger = logging.getLogger(__name__)


class ConstrainedTrainer(BaseTrainer):
    """Proxy-Lagrangian game: Adam for theta, swap regret for lambda, then shrinking"""

    method = 'constrained'

    def prepare(self, dataset: Dataset) -> Tuple[PairProblem, PairProblem]:
        if self.fairness is None:
            raise ConfigError("constrained training needs a fairness criterion")
        train, validation = super().prepare(dataset)
        self.active = self.constraints.active(train)
        return train, validation

    def start(self, model: Model, eta_theta: float, eta_lambda: float) -> RunState:
        state = super().start(model, eta_theta, eta_lambda)
        state.lam = LambdaState.initial(self.constraints.m)
        return state

    def step(self, state: RunState, batch: PairProblem) -> None:
        model = state.model
        _, grad = proxy_lagrangian_theta(model, state.lam.lam, self.constraints, batch, self.active)
        slacks = lagrangian_lambda(model, self.constraints, batch)
        state.model = model.with_theta(state.adam.step(model.theta, grad))
        state.lam = swap_regret_update(state.lam, slacks, state.eta_lambda)

    def finish(self, snapshots: List[Snapshot], validation: PairProblem, eta_theta: float,
               eta_lambda: float, seed: int) -> RunResult:
        fallback = False
        try:
            smodel = shrink(snapshots, self.constraints.epsilon)
        except InfeasibleError as e:
            logger.warning("Shrinking failed (%s); falling back to the least-violating snapshot", e)
            smodel = fallback_snapshot(snapshots)
            fallback = True

        report, mse = expected_report(smodel, validation)
        objective = report.auc if validation.task == RANKING else -mse
        return RunResult(eta_theta=eta_theta, eta_lambda=eta_lambda, seed=seed, artifact=smodel,
                         snapshots=snapshots, objective=float(objective),
                         violation=self.violation_of(report.table()), fallback=fallback)

    def selection_epsilon(self) -> Optional[float]:
        return self.constraints.epsilon
