import numpy as np
import pytest

from src.dataset import RANKING, REGRESSION, Dataset, split
from src.simgen import generate_two_group


def _ranking_dataset(rng, n_queries=6, per_query=5, num_groups=2, dim=2, continuous=False, levels=3):
    n = n_queries * per_query
    return Dataset(
        features=rng.normal(size=(n, dim)),
        labels=rng.integers(0, levels, size=n).astype(float),
        task=RANKING,
        query_ids=np.repeat(np.arange(n_queries), per_query),
        groups=rng.integers(0, num_groups, size=n) if num_groups else None,
        attributes=rng.integers(0, 4, size=n).astype(float) if continuous else None,
        num_groups=num_groups,
        continuous=continuous,
    )


def _regression_dataset(rng, n=30, num_groups=2, dim=2, continuous=False):
    return Dataset(
        features=rng.normal(size=(n, dim)),
        labels=rng.normal(size=n),
        task=REGRESSION,
        groups=rng.integers(0, num_groups, size=n) if num_groups else None,
        attributes=rng.normal(size=n) if continuous else None,
        num_groups=num_groups,
        continuous=continuous,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20200101)


@pytest.fixture
def ranking_factory():
    return _ranking_dataset


@pytest.fixture
def regression_factory():
    return _regression_dataset


@pytest.fixture(scope='session')
def small_simulation():
    """200 simulated two-group queries, split with seed 0"""
    return split(generate_two_group(200, seed=3), seed=0)


def brute_force_pairs(dataset, indices=None):
    """Every (better, worse) with a strictly larger label, same query for ranking"""
    indices = range(len(dataset)) if indices is None else indices
    pairs = set()
    for a in indices:
        for b in indices:
            if dataset.labels[a] <= dataset.labels[b]:
                continue
            if dataset.query_ids is not None and dataset.query_ids[a] != dataset.query_ids[b]:
                continue
            pairs.add((a, b))
    return pairs


@pytest.fixture
def pair_oracle():
    return brute_force_pairs
