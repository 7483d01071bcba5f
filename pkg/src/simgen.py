"""
Simulated ranking data: 11 candidates per query, one positive, Gaussian features per (label, group)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .dataset import RANKING, Dataset, make_rng

logger = logging.getLogger(__name__)

CANDIDATES_PER_QUERY = 11


@dataclass(frozen=True)
class GaussianSpec:
    mean: Tuple[float, float]
    covariance: Tuple[Tuple[float, float], Tuple[float, float]]

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ValueError(f"covariance must be a symmetric 2x2 matrix, got {self.covariance}")
        if np.any(np.diag(cov) <= 0):
            raise ValueError("covariance diagonal must be positive")
        # componentwise sampling below relies on it
        if cov[0, 1] != 0.0:
            raise ValueError("only diagonal covariances are supported")

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(np.asarray(self.covariance, dtype=float)))


def _isotropic(mean: Tuple[float, float], scale: float = 1.0) -> GaussianSpec:
    return GaussianSpec(mean=mean, covariance=((scale, 0.0), (0.0, scale)))


# keyed by (label, group)
TWO_GROUP_GAUSSIANS: Dict[Tuple[int, int], GaussianSpec] = {
    (-1, 0): _isotropic((-1.0, 1.0)),
    (-1, 1): _isotropic((-2.0, -1.0)),
    (1, 0): _isotropic((1.0, 0.0)),
    (1, 1): _isotropic((-1.5, 0.75), 0.5),
}

THREE_GROUP_GAUSSIANS: Dict[Tuple[int, int], GaussianSpec] = {
    **TWO_GROUP_GAUSSIANS,
    (-1, 2): _isotropic((-1.0, 1.0)),
    (1, 2): _isotropic((1.5, 0.5)),
}


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """n x 2 standard normals from PCG64 uniforms via the Box-Muller transform"""
    u1 = 1.0 - rng.random(n)  # (0, 1], keeps log finite
    u2 = rng.random(n)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])


def _generate(n_queries: int, seed: int, group_probs: Sequence[float],
              gaussians: Dict[Tuple[int, int], GaussianSpec]) -> Dataset:
    if n_queries < 1:
        raise ValueError(f"n_queries must be >= 1, got {n_queries}")
    rng = make_rng(seed)
    n = n_queries * CANDIDATES_PER_QUERY

    query_ids = np.repeat(np.arange(n_queries), CANDIDATES_PER_QUERY)
    positive = rng.integers(0, CANDIDATES_PER_QUERY, size=n_queries)
    labels = -np.ones(n)
    labels[np.arange(n_queries) * CANDIDATES_PER_QUERY + positive] = 1.0

    groups = np.searchsorted(np.cumsum(group_probs)[:-1], rng.random(n), side='right')

    noise = box_muller(rng, n)
    features = np.empty((n, 2))
    for (label, group), gaussian in gaussians.items():
        mask = (labels == label) & (groups == group)
        features[mask] = np.asarray(gaussian.mean) + gaussian.std * noise[mask]

    logger.debug("Generated %d queries (%d examples) with seed %d", n_queries, n, seed)
    return Dataset(
        features=features,
        labels=labels,
        task=RANKING,
        query_ids=query_ids,
        groups=groups,
        num_groups=len(group_probs),
        feature_names=('x0', 'x1'),
    )


def generate_two_group(n_queries: int, seed: int) -> Dataset:
    """Group 1 is a 10% minority drawn i.i.d. per candidate"""
    return _generate(n_queries, seed, (0.9, 0.1), TWO_GROUP_GAUSSIANS)


def generate_three_group(n_queries: int, seed: int) -> Dataset:
    return _generate(n_queries, seed, (0.45, 0.1, 0.45), THREE_GROUP_GAUSSIANS)


GENERATORS = {
    'two_group': generate_two_group,
    'three_group': generate_three_group,
}

GROUP_COUNTS = {
    'two_group': 2,
    'three_group': 3,
}
