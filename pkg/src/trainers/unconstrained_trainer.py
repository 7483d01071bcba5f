from .base_trainer import BaseTrainer, RunState
from ..surrogate import PairProblem, objective_scores


class UnconstrainedTrainer(BaseTrainer):
    """Adam ascent on the hinge AUC (ranking) or on -MSE (regression)"""

    method = 'unconstrained'

    def step(self, state: RunState, batch: PairProblem) -> None:
        model = state.model
        _, coef = objective_scores(model.scores(batch.features), batch)
        grad = model.gradient(batch.features, coef)
        state.model = model.with_theta(state.adam.step(model.theta, grad))
