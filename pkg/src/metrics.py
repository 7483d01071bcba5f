"""
Exact pairwise accuracy metrics, fairness criteria and their violations

Every metric is built from per-pair correctness indicators with strict
inequality: a pair counts as correct only when score(better) > score(worse),
so score ties count as incorrect. Undefined quantities (empty cells) are NaN
inside arrays and None at the scalar API.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import (GREATER, LESS, RANKING, REGRESSION, Dataset, PairSet, enumerate_pairs,
                      enumerate_parity_pairs)
from .errors import ConfigError, DataError
from .model import Model, StochasticModel

logger = logging.getLogger(__name__)

CROSS_GROUP_EO = 'cross_group_eo'
IN_GROUP_EA = 'in_group_ea'
ALL_ENTRIES = 'all_entries'
MARGINAL_EO = 'marginal_eo'
STATISTICAL_PARITY = 'statistical_parity'
CONTINUOUS_EO = 'continuous_eo'
SYMMETRIC_EA = 'symmetric_ea'
CRITERIA = (CROSS_GROUP_EO, IN_GROUP_EA, ALL_ENTRIES, MARGINAL_EO, STATISTICAL_PARITY,
            CONTINUOUS_EO, SYMMETRIC_EA)

REPORT_DECIMALS = 6


def _ratio(hits, counts):
    hits = np.asarray(hits, dtype=float)
    counts = np.asarray(counts, dtype=float)
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(counts > 0, hits / np.where(counts > 0, counts, 1.0), np.nan)


def _defined(value: float) -> Optional[float]:
    return None if value is None or np.isnan(value) else float(value)


@dataclass(frozen=True)
class AccuracyRef:
    """Names one accuracy: 'auc', 'cell' (i>j), 'row' (i>:), 'col' (:>i), 'parity' (i over j), 'greater', 'less'"""
    kind: str
    i: int = -1
    j: int = -1

    def __str__(self) -> str:
        return {
            'auc': 'AUC',
            'cell': f"A[{self.i}>{self.j}]",
            'row': f"A[{self.i}>:]",
            'col': f"A[:>{self.i}]",
            'parity': f"P[{self.i}>{self.j}]",
            'greater': 'A[>]',
            'less': 'A[<]',
        }[self.kind]


AUC_REF = AccuracyRef('auc')


@dataclass(frozen=True)
class ConstraintDelta:
    """Delta_c = sum(positive accuracies) - sum(negative accuracies), constrained to <= epsilon"""
    positive: Tuple[AccuracyRef, ...]
    negative: Tuple[AccuracyRef, ...]

    @property
    def name(self) -> str:
        def side(refs):
            return '+'.join(str(r) for r in refs)
        return f"{side(self.positive)}-{side(self.negative)}"


def _both_directions(items: Iterable[Tuple[Tuple[AccuracyRef, ...], Tuple[AccuracyRef, ...]]]) -> List[ConstraintDelta]:
    deltas = []
    for a, b in items:
        deltas.append(ConstraintDelta(a, b))
        deltas.append(ConstraintDelta(b, a))
    return deltas


@dataclass(frozen=True)
class FairnessSpec:
    criterion: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown fairness criterion {self.criterion!r}; choose from {', '.join(CRITERIA)}")
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def needs_parity(self) -> bool:
        return self.criterion == STATISTICAL_PARITY

    @property
    def continuous(self) -> bool:
        return self.criterion == CONTINUOUS_EO

    def check_compatible(self, num_groups: int, continuous: bool) -> None:
        if self.continuous and not continuous:
            raise ConfigError(f"criterion {self.criterion} needs a continuous protected attribute")
        if not self.continuous and num_groups < 2:
            raise ConfigError(f"criterion {self.criterion} needs at least two discrete groups")

    def constraints(self, num_groups: int) -> List[ConstraintDelta]:
        """Difference-form constraints, both directions for every unordered couple"""
        K = num_groups
        couples = list(combinations(range(K), 2))
        if self.criterion == CROSS_GROUP_EO:
            items = [((AccuracyRef('cell', i, j),), (AccuracyRef('cell', j, i),)) for i, j in couples]
        elif self.criterion == IN_GROUP_EA:
            items = [((AccuracyRef('cell', i, i),), (AccuracyRef('cell', j, j),)) for i, j in couples]
        elif self.criterion == ALL_ENTRIES:
            return (FairnessSpec(CROSS_GROUP_EO).constraints(K)
                    + FairnessSpec(IN_GROUP_EA).constraints(K))
        elif self.criterion == MARGINAL_EO:
            items = [((AccuracyRef('row', i),), (AccuracyRef('row', j),)) for i, j in couples]
        elif self.criterion == STATISTICAL_PARITY:
            items = [((AccuracyRef('parity', i, j),), (AccuracyRef('parity', j, i),)) for i, j in couples]
        elif self.criterion == CONTINUOUS_EO:
            items = [((AccuracyRef('greater'),), (AccuracyRef('less'),))]
        else:
            items = [((AccuracyRef('row', i), AccuracyRef('col', i)),
                      (AccuracyRef('row', j), AccuracyRef('col', j))) for i, j in couples]
        return _both_directions(items)

    def robust_terms(self, num_groups: int) -> List[Tuple[AccuracyRef, ...]]:
        """Accuracy groups whose minima the robust formulation maximizes (summed over groups)"""
        K = num_groups
        off_diagonal = tuple(AccuracyRef('cell', i, j) for i in range(K) for j in range(K) if i != j)
        diagonal = tuple(AccuracyRef('cell', i, i) for i in range(K))
        if self.criterion == ALL_ENTRIES:
            return [off_diagonal, diagonal]
        if self.criterion == CROSS_GROUP_EO:
            return [(AUC_REF,) + off_diagonal]
        if self.criterion == IN_GROUP_EA:
            return [(AUC_REF,) + diagonal]
        if self.criterion == MARGINAL_EO:
            return [(AUC_REF,) + tuple(AccuracyRef('row', i) for i in range(K))]
        if self.criterion == STATISTICAL_PARITY:
            return [(AUC_REF,) + tuple(AccuracyRef('parity', i, j) for i in range(K) for j in range(K) if i != j)]
        if self.criterion == CONTINUOUS_EO:
            return [(AUC_REF, AccuracyRef('greater'), AccuracyRef('less'))]
        raise ConfigError(f"no robust formulation for {self.criterion}")


@dataclass(frozen=True, eq=False)
class PairwiseAccuracyMatrix:
    """K x K hit and pair counts; every accuracy is derived from them.

    Keeping hits instead of ratios makes the p-weighted mixture of matrices
    exact: expected hits over a fixed pair set are linear in the atoms.
    """
    hits: np.ndarray
    counts: np.ndarray
    total_hits: float
    total_count: int

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return _ratio(self.hits, self.counts)

    @property
    def row_marginals(self) -> np.ndarray:
        return _ratio(self.hits.sum(axis=1), self.counts.sum(axis=1))

    @property
    def col_marginals(self) -> np.ndarray:
        return _ratio(self.hits.sum(axis=0), self.counts.sum(axis=0))

    @property
    def auc(self) -> float:
        return float(_ratio(self.total_hits, self.total_count))


@dataclass(frozen=True, eq=False)
class ParityMatrix:
    """hits[i, j]: cross-group couples in which the G_i member scores strictly higher"""
    hits: np.ndarray
    counts: np.ndarray

    def accuracy(self, i: int, j: int) -> Optional[float]:
        return _defined(float(_ratio(self.hits[i, j], self.counts[i, j])))


@dataclass(frozen=True, eq=False)
class ContinuousAccuracies:
    greater_hits: float
    greater_count: int
    less_hits: float
    less_count: int

    @property
    def greater(self) -> Optional[float]:
        return _defined(float(_ratio(self.greater_hits, self.greater_count)))

    @property
    def less(self) -> Optional[float]:
        return _defined(float(_ratio(self.less_hits, self.less_count)))


class AccuracyTable(dict):
    """AccuracyRef -> value (NaN when undefined)"""

    def accuracy(self, ref: AccuracyRef) -> Optional[float]:
        return _defined(self.get(ref, np.nan))

    def delta(self, constraint: ConstraintDelta) -> Optional[float]:
        values = [self.accuracy(r) for r in constraint.positive + constraint.negative]
        if any(v is None for v in values):
            return None
        k = len(constraint.positive)
        return float(sum(values[:k]) - sum(values[k:]))


def correct_pairs(scores: np.ndarray, pairs: PairSet) -> np.ndarray:
    """1.0 where score(better) > score(worse), else 0.0"""
    scores = np.asarray(scores, dtype=float)
    return (scores[pairs.better] > scores[pairs.worse]).astype(float)


def _cell_sums(values: np.ndarray, pairs: PairSet, K: int) -> np.ndarray:
    grouped = pairs.row >= 0
    flat = pairs.row[grouped] * K + pairs.col[grouped]
    return np.bincount(flat, weights=values[grouped], minlength=K * K).reshape(K, K)


@dataclass(frozen=True, eq=False)
class PairReport:
    """Exact metrics of one scorer (or an expected scorer) on one pair set"""
    matrix: PairwiseAccuracyMatrix
    continuous: Optional[ContinuousAccuracies] = None
    parity: Optional[ParityMatrix] = None

    @classmethod
    def from_correct(cls, correct: np.ndarray, pairs: PairSet, K: int,
                     parity_higher: Optional[np.ndarray] = None,
                     parity_lower: Optional[np.ndarray] = None,
                     parity_pairs: Optional[PairSet] = None) -> 'PairReport':
        """Build from (possibly expected) per-pair correctness values"""
        correct = np.asarray(correct, dtype=float)
        matrix = PairwiseAccuracyMatrix(
            hits=_cell_sums(correct, pairs, K),
            counts=_cell_sums(np.ones(len(pairs)), pairs, K).astype(np.int64),
            total_hits=float(correct.sum()),
            total_count=len(pairs),
        )
        continuous = None
        if np.any(pairs.tag != 0):
            greater, less = pairs.tag == 1, pairs.tag == -1
            continuous = ContinuousAccuracies(
                greater_hits=float(correct[greater].sum()), greater_count=int(greater.sum()),
                less_hits=float(correct[less].sum()), less_count=int(less.sum()),
            )
        parity = None
        if parity_pairs is not None:
            upper = _cell_sums(np.asarray(parity_higher, dtype=float), parity_pairs, K)
            lower = _cell_sums(np.asarray(parity_lower, dtype=float), parity_pairs, K)
            counts = _cell_sums(np.ones(len(parity_pairs)), parity_pairs, K)
            parity = ParityMatrix(hits=upper + lower.T, counts=(counts + counts.T).astype(np.int64))
        return cls(matrix=matrix, continuous=continuous, parity=parity)

    @classmethod
    def from_scores(cls, scores: np.ndarray, pairs: PairSet, K: int,
                    parity_pairs: Optional[PairSet] = None) -> 'PairReport':
        scores = np.asarray(scores, dtype=float)
        higher = lower = None
        if parity_pairs is not None:
            higher = (scores[parity_pairs.better] > scores[parity_pairs.worse]).astype(float)
            lower = (scores[parity_pairs.worse] > scores[parity_pairs.better]).astype(float)
        return cls.from_correct(correct_pairs(scores, pairs), pairs, K, higher, lower, parity_pairs)

    @property
    def auc(self) -> float:
        return self.matrix.auc

    def table(self) -> AccuracyTable:
        K = self.matrix.K
        table = AccuracyTable()
        table[AUC_REF] = self.matrix.auc
        entries, rows, cols = self.matrix.entries, self.matrix.row_marginals, self.matrix.col_marginals
        for i in range(K):
            table[AccuracyRef('row', i)] = rows[i]
            table[AccuracyRef('col', i)] = cols[i]
            for j in range(K):
                table[AccuracyRef('cell', i, j)] = entries[i, j]
        if self.continuous is not None:
            table[AccuracyRef('greater')] = np.nan if self.continuous.greater is None else self.continuous.greater
            table[AccuracyRef('less')] = np.nan if self.continuous.less is None else self.continuous.less
        if self.parity is not None:
            for i in range(K):
                for j in range(K):
                    if i != j:
                        value = self.parity.accuracy(i, j)
                        table[AccuracyRef('parity', i, j)] = np.nan if value is None else value
        return table

    def accuracy(self, ref: AccuracyRef) -> Optional[float]:
        return self.table().accuracy(ref)

    def delta(self, constraint: ConstraintDelta) -> Optional[float]:
        return self.table().delta(constraint)


def accuracy_matrix(scores: np.ndarray, pairs: PairSet, K: int) -> PairwiseAccuracyMatrix:
    return PairReport.from_scores(scores, pairs, K).matrix


def continuous_accuracies(scores: np.ndarray, pairs: PairSet) -> Tuple[Optional[float], Optional[float]]:
    """(A_>, A_<) over pairs whose better member has the larger / smaller attribute"""
    correct = correct_pairs(scores, pairs)
    greater, less = pairs.tag == 1, pairs.tag == -1
    return (_defined(float(_ratio(correct[greater].sum(), greater.sum()))),
            _defined(float(_ratio(correct[less].sum(), less.sum()))))


def parity_accuracy(scores: np.ndarray, parity_pairs: PairSet, i: int, j: int) -> Optional[float]:
    """P(G_i member scores strictly higher than the G_j member) over stored couples"""
    if i == j:
        raise ValueError("parity accuracy needs two distinct groups")
    scores = np.asarray(scores, dtype=float)
    couples = parity_pairs.cell(min(i, j), max(i, j))
    if len(couples) == 0:
        return None
    lower_member = scores[parity_pairs.better[couples]]
    upper_member = scores[parity_pairs.worse[couples]]
    wins = lower_member > upper_member if i < j else upper_member > lower_member
    return float(wins.mean())


def mse(scores: np.ndarray, dataset: Dataset, split: Optional[str] = None) -> float:
    indices = dataset.indices(split)
    if len(indices) == 0:
        raise DataError(f"split {split!r} is empty")
    residual = np.asarray(scores, dtype=float)[indices] - dataset.labels[indices]
    return float(np.mean(residual ** 2))


def violation(report: Union[PairReport, AccuracyTable], spec: FairnessSpec,
              num_groups: Optional[int] = None) -> Optional[float]:
    """Largest defined constraint difference; None when no constraint is defined.

    Every criterion lists both directions of each couple, so the largest
    difference is the largest absolute gap the criterion names.
    """
    if isinstance(report, PairReport):
        num_groups = report.matrix.K
        report = report.table()
    if num_groups is None:
        raise ValueError("num_groups is needed with a bare accuracy table")
    deltas = [report.delta(c) for c in spec.constraints(num_groups)]
    deltas = [d for d in deltas if d is not None]
    return max(deltas) if deltas else None


def per_query_average(metric: Callable[[np.ndarray, PairSet], Optional[float]], scores: np.ndarray,
                      pairs: PairSet) -> Optional[float]:
    """Unweighted mean over queries of `metric`, skipping queries where it is undefined"""
    values = []
    for indices in pairs.by_query().values():
        value = metric(scores, pairs.subset(indices))
        if value is not None and not np.isnan(value):
            values.append(value)
    return float(np.mean(values)) if values else None


def average_tables(tables: Sequence[AccuracyTable]) -> AccuracyTable:
    """Per-accuracy mean over the tables in which it is defined"""
    averaged = AccuracyTable()
    refs = {ref for table in tables for ref in table}
    for ref in refs:
        values = [table[ref] for table in tables if ref in table and not np.isnan(table[ref])]
        averaged[ref] = float(np.mean(values)) if values else np.nan
    return averaged


def applicable_criteria(dataset: Dataset) -> List[str]:
    criteria = []
    for criterion in CRITERIA:
        try:
            FairnessSpec(criterion).check_compatible(dataset.num_groups, dataset.continuous)
        except ConfigError:
            continue
        criteria.append(criterion)
    return criteria


def _round(value) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return None if np.isnan(value) else round(value, REPORT_DECIMALS)


def _round_array(values: np.ndarray) -> list:
    values = np.asarray(values)
    if values.ndim == 0:
        return _round(values)
    return [_round_array(v) for v in values]


@dataclass
class EvaluationReport:
    """Metrics of a (stochastic) model on one split.

    `table` holds the headline accuracies: per-query averages for ranking
    datasets with several queries, pooled otherwise.
    """
    split: Optional[str]
    pooled: PairReport
    table: AccuracyTable
    aggregation: str
    violations: Dict[str, Optional[float]]
    mse: Optional[float] = None
    atoms: List[Dict] = field(default_factory=list)

    @property
    def auc(self) -> Optional[float]:
        return self.table.accuracy(AUC_REF)

    @property
    def matrix(self) -> np.ndarray:
        K = self.pooled.matrix.K
        return np.array([[self.table.get(AccuracyRef('cell', i, j), np.nan) for j in range(K)] for i in range(K)])

    def to_dict(self) -> Dict:
        K = self.pooled.matrix.K
        report = {
            'split': self.split,
            'aggregation': self.aggregation,
            'matrix': _round_array(self.matrix),
            'counts': self.pooled.matrix.counts.tolist(),
            'row_marginals': [_round(self.table.get(AccuracyRef('row', i), np.nan)) for i in range(K)],
            'col_marginals': [_round(self.table.get(AccuracyRef('col', i), np.nan)) for i in range(K)],
            'auc': _round(self.auc),
            'mse': _round(self.mse),
            'violations': {name: _round(value) for name, value in self.violations.items()},
        }
        if AccuracyRef('greater') in self.table:
            report['continuous'] = {
                'greater': _round(self.table[AccuracyRef('greater')]),
                'less': _round(self.table[AccuracyRef('less')]),
            }
        if self.aggregation == 'per_query':
            report['pooled'] = {
                'matrix': _round_array(self.pooled.matrix.entries),
                'auc': _round(self.pooled.auc),
            }
        if self.atoms:
            report['atoms'] = self.atoms
        return report


def _split_pairs(dataset: Dataset, split: Optional[str], max_pairs: Optional[int], seed: int,
                 with_parity: bool) -> Tuple[PairSet, Optional[PairSet]]:
    pairs = enumerate_pairs(dataset, split, max_pairs=max_pairs, seed=seed)
    parity_pairs = None
    if with_parity and dataset.num_groups >= 2:
        parity_pairs = enumerate_parity_pairs(dataset, split, max_pairs=max_pairs, seed=seed)
    return pairs, parity_pairs


def evaluate_stochastic(smodel: Union[StochasticModel, Model], dataset: Dataset, split: Optional[str],
                        spec: Optional[FairnessSpec] = None, max_pairs: Optional[int] = None,
                        seed: int = 0) -> EvaluationReport:
    """Exact expected metrics of a stochastic model.

    Expected per-pair correctness is the p-weighted average of the atoms'
    indicators, so every accuracy of the mixture is exact; violations are
    computed on the expected accuracies.
    """
    if isinstance(smodel, Model):
        smodel = StochasticModel.deterministic(smodel)
    criteria = applicable_criteria(dataset)
    if spec is not None and spec.criterion not in criteria:
        spec.check_compatible(dataset.num_groups, dataset.continuous)
    with_parity = STATISTICAL_PARITY in criteria
    pairs, parity_pairs = _split_pairs(dataset, split, max_pairs, seed, with_parity)
    K = dataset.num_groups

    correct = np.zeros(len(pairs))
    higher = lower = None
    if parity_pairs is not None:
        higher, lower = np.zeros(len(parity_pairs)), np.zeros(len(parity_pairs))
    expected_mse = 0.0 if dataset.task == REGRESSION else None
    atoms = []
    for model, probability in smodel.atoms:
        scores = model.scores(dataset.features)
        atom_report = PairReport.from_scores(scores, pairs, K, parity_pairs)
        correct += probability * correct_pairs(scores, pairs)
        if parity_pairs is not None:
            higher += probability * (scores[parity_pairs.better] > scores[parity_pairs.worse])
            lower += probability * (scores[parity_pairs.worse] > scores[parity_pairs.better])
        atom = {'probability': _round(probability), 'auc': _round(atom_report.auc)}
        if expected_mse is not None:
            atom_mse = mse(scores, dataset, split)
            expected_mse += probability * atom_mse
            atom['mse'] = _round(atom_mse)
        if spec is not None:
            atom['violation'] = _round(violation(atom_report, spec))
        atoms.append(atom)

    pooled = PairReport.from_correct(correct, pairs, K, higher, lower, parity_pairs)
    table, aggregation = pooled.table(), 'pooled'
    by_query = pairs.by_query()
    if dataset.task == RANKING and len(by_query) > 1:
        parity_by_query = parity_pairs.by_query() if parity_pairs is not None else {}
        tables = []
        for query, indices in by_query.items():
            query_parity = parity_by_query.get(query)
            tables.append(PairReport.from_correct(
                correct[indices], pairs.subset(indices), K,
                None if query_parity is None else higher[query_parity],
                None if query_parity is None else lower[query_parity],
                None if query_parity is None else parity_pairs.subset(query_parity),
            ).table())
        table, aggregation = average_tables(tables), 'per_query'

    violations = {criterion: violation(table, FairnessSpec(criterion), K) for criterion in criteria}
    return EvaluationReport(split=split, pooled=pooled, table=table, aggregation=aggregation,
                            violations=violations, mse=expected_mse,
                            atoms=atoms if len(smodel.models) > 1 else [])
