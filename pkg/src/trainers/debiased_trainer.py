from typing import Tuple

import numpy as np

from .base_trainer import BaseTrainer, RunState
from ..dataset import RANKING, TRAIN, Dataset
from ..errors import ConfigError, DataError
from ..surrogate import PairProblem, objective_scores


def debiasing_weights(groups: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """alpha[z, y] for z in {0, 1} and y in {negative, positive}; only alpha[1, negative] differs from 1.

    It equalizes the negative-to-positive ratio of group 1 with that of group 0:
    alpha[1, -1] = (neg_0 / pos_0) / (neg_1 / pos_1).
    """
    positive = labels > 0
    counts = np.zeros((2, 2))
    for z in (0, 1):
        counts[z, 0] = np.sum((groups == z) & ~positive)
        counts[z, 1] = np.sum((groups == z) & positive)
        if counts[z, 0] == 0 or counts[z, 1] == 0:
            raise DataError(f"group {z} has no {'negative' if counts[z, 0] == 0 else 'positive'} "
                            f"training examples; debiasing weights are undefined")
    alpha = np.ones((2, 2))
    alpha[1, 0] = (counts[0, 0] / counts[0, 1]) / (counts[1, 0] / counts[1, 1])
    return alpha


class DebiasedTrainer(BaseTrainer):
    """Unconstrained training on a reweighted pairwise accuracy"""

    method = 'debiased'

    def prepare(self, dataset: Dataset) -> Tuple[PairProblem, PairProblem]:
        if dataset.num_groups != 2:
            raise ConfigError(f"debiased weighting needs exactly two groups, dataset has {dataset.num_groups}")
        if dataset.task != RANKING:
            raise ConfigError("debiased weighting is defined for ranking tasks only")
        train, validation = super().prepare(dataset)
        rows = dataset.restrict(TRAIN)
        self.alpha = debiasing_weights(rows.groups, rows.labels)
        return train, validation

    def pair_weights(self, batch: PairProblem) -> np.ndarray:
        """alpha[z_i, y_i] * alpha[z_j, y_j] for every pair of `batch`.

        The weighted hinge sum is divided by the number of pairs in the batch.
        With full enumeration that count is n_+ n_- summed over queries; with
        `max_pairs` or minibatch thinning the mean over the drawn pairs
        estimates the same n_+ n_- normalized sum.
        """
        pairs = batch.pairs
        better_positive = (batch.labels[pairs.better] > 0).astype(int)
        worse_positive = (batch.labels[pairs.worse] > 0).astype(int)
        return self.alpha[pairs.row, better_positive] * self.alpha[pairs.col, worse_positive]

    def step(self, state: RunState, batch: PairProblem) -> None:
        model = state.model
        _, coef = objective_scores(model.scores(batch.features), batch, self.pair_weights(batch))
        grad = model.gradient(batch.features, coef)
        state.model = model.with_theta(state.adam.step(model.theta, grad))
