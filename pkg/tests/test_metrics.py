import numpy as np
import pytest

from src.dataset import RANKING, REGRESSION, Dataset, enumerate_pairs, enumerate_parity_pairs
from src.metrics import (ALL_ENTRIES, CRITERIA, CROSS_GROUP_EO, IN_GROUP_EA, MARGINAL_EO, STATISTICAL_PARITY,
                         SYMMETRIC_EA, AccuracyRef, AccuracyTable, FairnessSpec, PairReport, accuracy_matrix,
                         applicable_criteria, continuous_accuracies, evaluate_stochastic, mse, parity_accuracy,
                         per_query_average, violation)
from src.errors import ConfigError, DataError
from src.model import LINEAR, Model, ModelSpec, StochasticModel


def _brute_force_matrix(dataset, scores, K):
    hits, counts = np.zeros((K, K)), np.zeros((K, K))
    for a in range(len(dataset)):
        for b in range(len(dataset)):
            if dataset.labels[a] <= dataset.labels[b]:
                continue
            if dataset.query_ids is not None and dataset.query_ids[a] != dataset.query_ids[b]:
                continue
            i, j = dataset.groups[a], dataset.groups[b]
            counts[i, j] += 1
            hits[i, j] += scores[a] > scores[b]
    return hits, counts


def _linear(weights, bias=0.0):
    return Model(ModelSpec(LINEAR, len(weights)), np.append(weights, bias))


def test_matrix_matches_brute_force(ranking_factory, rng):
    for _ in range(5):
        dataset = ranking_factory(rng, n_queries=3, per_query=10, num_groups=3)
        scores = rng.normal(size=len(dataset))
        matrix = accuracy_matrix(scores, enumerate_pairs(dataset), 3)
        hits, counts = _brute_force_matrix(dataset, scores, 3)
        np.testing.assert_array_equal(matrix.counts, counts)
        np.testing.assert_array_equal(matrix.hits, hits)
        defined = counts > 0
        np.testing.assert_array_equal(np.isnan(matrix.entries), ~defined)
        np.testing.assert_allclose(matrix.entries[defined], hits[defined] / counts[defined])
        assert matrix.auc == pytest.approx(hits.sum() / counts.sum())
        np.testing.assert_allclose(matrix.row_marginals, hits.sum(axis=1) / counts.sum(axis=1))


def test_perfect_and_reversed_scorers(ranking_factory, rng):
    dataset = ranking_factory(rng, n_queries=4, per_query=8)
    pairs = enumerate_pairs(dataset)
    perfect = accuracy_matrix(dataset.labels, pairs, 2)
    assert perfect.auc == 1.0
    assert np.all(perfect.entries[~np.isnan(perfect.entries)] == 1.0)

    reversed_ = accuracy_matrix(-dataset.labels, pairs, 2)
    assert np.all(reversed_.entries[~np.isnan(reversed_.entries)] == 0.0)

    scores = rng.normal(size=len(dataset))
    flipped = accuracy_matrix(-scores, pairs, 2).entries
    original = accuracy_matrix(scores, pairs, 2).entries
    defined = ~np.isnan(original)
    np.testing.assert_allclose(flipped[defined], 1.0 - original[defined])


def test_ties_count_as_incorrect(ranking_factory, rng):
    dataset = ranking_factory(rng)
    matrix = accuracy_matrix(np.zeros(len(dataset)), enumerate_pairs(dataset), 2)
    assert matrix.auc == 0.0

    parity_pairs = enumerate_parity_pairs(dataset)
    assert parity_accuracy(np.ones(len(dataset)), parity_pairs, 0, 1) == 0.0


def test_monotone_transform_changes_nothing(regression_factory, rng):
    dataset = regression_factory(rng, n=40)
    pairs = enumerate_pairs(dataset)
    parity_pairs = enumerate_parity_pairs(dataset)
    scores = rng.normal(size=len(dataset))
    before = PairReport.from_scores(scores, pairs, 2, parity_pairs)
    after = PairReport.from_scores(np.exp(2 * scores + 1), pairs, 2, parity_pairs)
    np.testing.assert_array_equal(before.matrix.hits, after.matrix.hits)
    for criterion in (CROSS_GROUP_EO, IN_GROUP_EA, MARGINAL_EO, STATISTICAL_PARITY, SYMMETRIC_EA):
        assert violation(before, FairnessSpec(criterion)) == violation(after, FairnessSpec(criterion))


def test_continuous_accuracies():
    # y and z agree exactly on the pairs where z(better) > z(worse)
    dataset = Dataset(features=np.zeros((4, 1)), labels=[3.0, 2.0, 1.0, 0.0], task=REGRESSION,
                      attributes=[1.0, 0.0, 3.0, 2.0], continuous=True)
    pairs = enumerate_pairs(dataset)
    assert continuous_accuracies(dataset.labels, pairs) == (1.0, 1.0)
    assert continuous_accuracies(dataset.attributes, pairs) == (1.0, 0.0)


def test_continuous_accuracies_brute_force(regression_factory, rng):
    dataset = regression_factory(rng, n=50, num_groups=0, continuous=True)
    scores = rng.normal(size=50)
    hits = {1: 0, -1: 0}
    counts = {1: 0, -1: 0}
    for a in range(50):
        for b in range(50):
            if dataset.labels[a] > dataset.labels[b] and dataset.attributes[a] != dataset.attributes[b]:
                tag = 1 if dataset.attributes[a] > dataset.attributes[b] else -1
                counts[tag] += 1
                hits[tag] += scores[a] > scores[b]
    greater, less = continuous_accuracies(scores, enumerate_pairs(dataset))
    assert greater == pytest.approx(hits[1] / counts[1])
    assert less == pytest.approx(hits[-1] / counts[-1])


def test_parity_accuracy_brute_force(regression_factory, rng):
    dataset = regression_factory(rng, n=40, num_groups=3)
    scores = rng.normal(size=40)
    parity_pairs = enumerate_parity_pairs(dataset)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            wins = [scores[a] > scores[b] for a in range(40) for b in range(40)
                    if dataset.groups[a] == i and dataset.groups[b] == j]
            assert parity_accuracy(scores, parity_pairs, i, j) == pytest.approx(np.mean(wins))

    favoured = np.where(dataset.groups == 0, 10.0, 0.0) + rng.normal(size=40) * 0.1
    assert parity_accuracy(favoured, parity_pairs, 0, 1) == 1.0
    with pytest.raises(ValueError):
        parity_accuracy(scores, parity_pairs, 1, 1)


def test_mse():
    dataset = Dataset(features=np.zeros((2, 1)), labels=[0.0, 2.0], task=REGRESSION)
    assert mse(np.ones(2), dataset) == 1.0
    assert mse(dataset.labels, dataset) == 0.0


def test_mse_on_empty_split(regression_factory, rng):
    dataset = regression_factory(rng, n=4)
    dataset = dataset.with_split(np.array(['train'] * 4, dtype=object))
    with pytest.raises(DataError):
        mse(np.zeros(4), dataset, 'test')


def test_violation_by_hand():
    table = AccuracyTable({AccuracyRef('cell', 0, 1): 0.9, AccuracyRef('cell', 1, 0): 0.7,
                           AccuracyRef('cell', 0, 0): 0.5, AccuracyRef('cell', 1, 1): 0.8})
    assert violation(table, FairnessSpec(CROSS_GROUP_EO), 2) == pytest.approx(0.2)
    assert violation(table, FairnessSpec(IN_GROUP_EA), 2) == pytest.approx(0.3)
    assert violation(table, FairnessSpec(ALL_ENTRIES), 2) == pytest.approx(0.3)


def test_violation_symmetric_matrix_is_zero():
    table = AccuracyTable({AccuracyRef('cell', i, j): 0.6 for i in range(2) for j in range(2)})
    for i in range(2):
        table[AccuracyRef('row', i)] = 0.6
        table[AccuracyRef('col', i)] = 0.6
    for criterion in (CROSS_GROUP_EO, IN_GROUP_EA, ALL_ENTRIES, MARGINAL_EO, SYMMETRIC_EA):
        assert violation(table, FairnessSpec(criterion), 2) == 0.0


def test_violation_undefined_when_cells_are_empty():
    table = AccuracyTable({AccuracyRef('cell', 0, 1): 0.9, AccuracyRef('cell', 1, 0): np.nan})
    assert violation(table, FairnessSpec(CROSS_GROUP_EO), 2) is None


def test_fairness_spec_validation():
    with pytest.raises(ConfigError):
        FairnessSpec('demographic', 0.1)
    with pytest.raises(ConfigError):
        FairnessSpec(CROSS_GROUP_EO, -0.1)
    with pytest.raises(ConfigError):
        FairnessSpec('continuous_eo').check_compatible(2, False)
    with pytest.raises(ConfigError):
        FairnessSpec(CROSS_GROUP_EO).check_compatible(0, True)
    assert len(FairnessSpec(CROSS_GROUP_EO).constraints(3)) == 6
    assert len(FairnessSpec(ALL_ENTRIES).constraints(2)) == 4


def test_applicable_criteria(regression_factory, rng):
    assert applicable_criteria(regression_factory(rng, num_groups=0, continuous=True)) == ['continuous_eo']
    grouped = applicable_criteria(regression_factory(rng))
    assert 'continuous_eo' not in grouped
    assert set(grouped) == set(CRITERIA) - {'continuous_eo'}


def test_per_query_average_is_unweighted():
    # query 0 has one pair ranked right; query 1 has two pairs, one right
    dataset = Dataset(features=np.zeros((5, 1)), labels=[1.0, 0.0, 2.0, 1.0, 0.0], task=RANKING,
                      query_ids=[0, 0, 1, 1, 1])
    scores = np.array([1.0, 0.0, 0.0, 1.0, -1.0])
    pairs = enumerate_pairs(dataset)

    def auc(s, p):
        return PairReport.from_scores(s, p, 0).auc

    per_query = {q: auc(scores, pairs.subset(idx)) for q, idx in pairs.by_query().items()}
    assert per_query[0] == 1.0
    assert per_query[1] == pytest.approx(2 / 3)
    assert per_query_average(auc, scores, pairs) == pytest.approx((1.0 + 2 / 3) / 2)

    single = Dataset(features=np.zeros((3, 1)), labels=[2.0, 1.0, 0.0], task=RANKING, query_ids=[0, 0, 0])
    single_pairs = enumerate_pairs(single)
    mixed = np.array([0.0, 1.0, -1.0])
    assert per_query_average(auc, mixed, single_pairs) == auc(mixed, single_pairs)


def test_stochastic_evaluation_is_linear(regression_factory, rng):
    dataset = regression_factory(rng, n=30)
    atoms = [_linear(rng.normal(size=2), rng.normal()) for _ in range(3)]
    probabilities = np.array([0.2, 0.5, 0.3])
    spec = FairnessSpec(CROSS_GROUP_EO, 0.1)
    report = evaluate_stochastic(StochasticModel(tuple(atoms), probabilities), dataset, None, spec)
    singles = [evaluate_stochastic(model, dataset, None, spec) for model in atoms]

    assert report.auc == pytest.approx(sum(p * s.auc for p, s in zip(probabilities, singles)))
    assert report.mse == pytest.approx(sum(p * s.mse for p, s in zip(probabilities, singles)))
    assert len(report.atoms) == 3
    assert singles[0].atoms == []

    # Monte Carlo draws of a scorer agree with the exact expectation
    draws = rng.choice(3, size=100000, p=probabilities)
    sampled = np.array([s.auc for s in singles])[draws]
    assert abs(sampled.mean() - report.auc) <= 3 * sampled.std() / np.sqrt(len(draws)) + 1e-12


def test_stochastic_single_atom_equals_deterministic(ranking_factory, rng):
    dataset = ranking_factory(rng, n_queries=5, per_query=6)
    model = _linear(rng.normal(size=2))
    mixed = evaluate_stochastic(StochasticModel.deterministic(model), dataset, None).to_dict()
    plain = evaluate_stochastic(model, dataset, None).to_dict()
    assert mixed == plain
    assert plain['aggregation'] == 'per_query'
    assert 'pooled' in plain


def test_evaluation_report_layout(regression_factory, rng):
    dataset = regression_factory(rng, n=20)
    report = evaluate_stochastic(_linear(rng.normal(size=2)), dataset, None, FairnessSpec(MARGINAL_EO))
    data = report.to_dict()
    assert data['aggregation'] == 'pooled'
    assert len(data['matrix']) == 2
    assert len(data['row_marginals']) == 2
    assert set(data['violations']) == set(applicable_criteria(dataset))
    assert data['mse'] == pytest.approx(report.mse, abs=1e-6)
