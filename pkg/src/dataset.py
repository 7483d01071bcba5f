"""
Datasets, CSV ingestion, deterministic splitting and enumeration of comparable pairs
"""

import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

RANKING = 'ranking'
REGRESSION = 'regression'
TASKS = (RANKING, REGRESSION)

TRAIN = 'train'
VALIDATION = 'validation'
TEST = 'test'
SPLITS = (TRAIN, VALIDATION, TEST)

SUPERVISED = 'supervised'
PARITY = 'parity'

GREATER = 'greater'
LESS = 'less'
# Continuous-attribute tags stored per pair
_TAG_CODES = {GREATER: 1, LESS: -1}


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator used for every seeded draw in the package"""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Example:
    features: Tuple[float, ...]
    label: float
    query_id: Optional[int] = None
    group: Optional[int] = None
    attribute: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of examples.

    Rows are stored as numpy arrays so that scoring and pair enumeration stay
    vectorized; `examples` materializes the row view when it is needed.
    """
    features: np.ndarray
    labels: np.ndarray
    task: str = RANKING
    query_ids: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None
    attributes: Optional[np.ndarray] = None
    num_groups: int = 0
    continuous: bool = False
    split_tags: Optional[np.ndarray] = None
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(len(features), -1)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', np.asarray(self.labels, dtype=float))
        n = len(self.labels)
        if features.shape[0] != n:
            raise DataError(f"{features.shape[0]} feature rows for {n} labels")
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")

        if self.task == RANKING:
            if self.query_ids is None:
                raise DataError("ranking datasets need a query id on every example")
            object.__setattr__(self, 'query_ids', np.asarray(self.query_ids, dtype=np.int64))
        elif self.query_ids is not None:
            raise DataError("regression datasets carry no query ids")

        if self.num_groups > 0:
            if self.groups is None:
                raise DataError(f"dataset declares {self.num_groups} groups but has no group column")
            groups = np.asarray(self.groups, dtype=np.int64)
            bad = np.flatnonzero((groups < 0) | (groups >= self.num_groups))
            if bad.size:
                raise DataError(f"example {bad[0]}: group {groups[bad[0]]} outside [0, {self.num_groups})")
            object.__setattr__(self, 'groups', groups)

        if self.continuous:
            if self.attributes is None:
                raise DataError("dataset declares a continuous attribute but has none")
            attributes = np.asarray(self.attributes, dtype=float)
            bad = np.flatnonzero(~np.isfinite(attributes))
            if bad.size:
                raise DataError(f"example {bad[0]}: attribute is not finite")
            object.__setattr__(self, 'attributes', attributes)

        if not self.feature_names:
            object.__setattr__(self, 'feature_names', tuple(f"x{i}" for i in range(features.shape[1])))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def example(self, index: int) -> Example:
        return Example(
            features=tuple(float(v) for v in self.features[index]),
            label=float(self.labels[index]),
            query_id=int(self.query_ids[index]) if self.query_ids is not None else None,
            group=int(self.groups[index]) if self.num_groups > 0 else None,
            attribute=float(self.attributes[index]) if self.continuous else None,
        )

    @property
    def examples(self) -> List[Example]:
        return [self.example(i) for i in range(len(self))]

    def with_split(self, tags: np.ndarray) -> 'Dataset':
        return replace(self, split_tags=np.asarray(tags, dtype=object))

    def indices(self, split: Optional[str] = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self))
        if self.split_tags is None:
            raise DataError("dataset has not been split")
        return np.flatnonzero(self.split_tags == split)

    def take(self, indices: np.ndarray) -> 'Dataset':
        def pick(column):
            return None if column is None else column[indices]

        return replace(
            self,
            features=self.features[indices],
            labels=self.labels[indices],
            query_ids=pick(self.query_ids),
            groups=pick(self.groups),
            attributes=pick(self.attributes),
            split_tags=pick(self.split_tags),
        )

    def restrict(self, split: str) -> 'Dataset':
        """Rows of one split, re-indexed from zero"""
        return self.take(self.indices(split))


@dataclass(frozen=True)
class CsvSchema:
    """Column binding for `load_csv`; declared in the run config, never inferred"""
    task: str = RANKING
    num_groups: int = 0
    continuous: bool = False
    label_column: str = 'label'
    query_column: Optional[str] = 'query_id'
    group_column: Optional[str] = 'group'
    attribute_column: Optional[str] = 'attribute'
    feature_columns: Optional[Tuple[str, ...]] = None

    def special_columns(self) -> List[str]:
        columns = [self.label_column]
        if self.task == RANKING and self.query_column:
            columns.append(self.query_column)
        if self.num_groups > 0 and self.group_column:
            columns.append(self.group_column)
        if self.continuous and self.attribute_column:
            columns.append(self.attribute_column)
        return columns


_LINE_PATTERN = re.compile(r'line (\d+)')


def _parse_float(text: str) -> float:
    """Correctly rounded parse; NaN marks a cell that is not a number"""
    try:
        return float(text)
    except ValueError:
        return np.nan


def load_csv(path: str, schema: CsvSchema) -> Dataset:
    """Read a dataset file; rows keep file order.

    Errors name the 1-based file line (the header is line 1).
    """
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file")

    try:
        frame = pd.read_csv(path, dtype=str, na_filter=False, skip_blank_lines=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: missing header row")
    except pd.errors.ParserError as e:
        match = _LINE_PATTERN.search(str(e))
        where = f"line {match.group(1)}" if match else "unknown line"
        raise DataError(f"{path}:{where}: inconsistent row width ({e})")

    header = list(frame.columns)
    special = schema.special_columns()
    missing = [column for column in special if column not in header]
    if schema.feature_columns is not None:
        missing += [column for column in schema.feature_columns if column not in header]
    if missing:
        raise DataError(f"{path}:1: header lacks columns {', '.join(missing)}")
    if schema.task == RANKING and not schema.query_column:
        raise DataError(f"{path}: ranking schema must name a query column")
    if schema.num_groups > 0 and not schema.group_column:
        raise DataError(f"{path}: schema declares groups but names no group column")
    if schema.continuous and not schema.attribute_column:
        raise DataError(f"{path}: schema declares a continuous attribute but names no column")

    if schema.feature_columns is not None:
        feature_columns = list(schema.feature_columns)
    else:
        feature_columns = [column for column in header if column not in special]

    # Short rows come back as NaN because na_filter is off for real cells
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        raise DataError(f"{path}:{row + 2}: inconsistent row width, expected {len(header)} fields")

    def numeric(column: str, integer: bool = False) -> np.ndarray:
        raw = frame[column].str.strip()
        values = raw.map(_parse_float).to_numpy(dtype=float)
        bad = np.flatnonzero(np.isnan(values))
        if bad.size:
            row = int(bad[0])
            raise DataError(f"{path}:{row + 2}: non-numeric value {frame[column].iloc[row]!r} in column {column!r}")
        if integer:
            fractional = np.flatnonzero(~np.isfinite(values) | (values != np.round(values)))
            if fractional.size:
                row = int(fractional[0])
                raise DataError(f"{path}:{row + 2}: column {column!r} needs an integer, got {frame[column].iloc[row]!r}")
            return values.astype(np.int64)
        return values

    n = len(frame)
    features = np.column_stack([numeric(c) for c in feature_columns]) if feature_columns else np.zeros((n, 0))
    features = features.reshape(n, len(feature_columns))
    labels = numeric(schema.label_column)
    query_ids = numeric(schema.query_column, integer=True) if schema.task == RANKING else None

    groups = None
    if schema.num_groups > 0:
        groups = numeric(schema.group_column, integer=True)
        bad = np.flatnonzero((groups < 0) | (groups >= schema.num_groups))
        if bad.size:
            row = int(bad[0])
            raise DataError(f"{path}:{row + 2}: group {groups[row]} outside [0, {schema.num_groups})")

    attributes = None
    if schema.continuous:
        attributes = numeric(schema.attribute_column)
        bad = np.flatnonzero(~np.isfinite(attributes))
        if bad.size:
            raise DataError(f"{path}:{int(bad[0]) + 2}: attribute must be finite")

    logger.debug("Loaded %d rows with %d features from %s", n, len(feature_columns), path)
    return Dataset(
        features=features,
        labels=labels,
        task=schema.task,
        query_ids=query_ids,
        groups=groups,
        attributes=attributes,
        num_groups=schema.num_groups,
        continuous=schema.continuous,
        feature_names=tuple(feature_columns),
    )


def write_csv(dataset: Dataset, path: str) -> None:
    """Write `dataset` in the format `load_csv` reads with the default schema"""
    columns: Dict[str, np.ndarray] = {}
    if dataset.task == RANKING:
        columns['query_id'] = dataset.query_ids
    columns['label'] = dataset.labels
    if dataset.num_groups > 0:
        columns['group'] = dataset.groups
    if dataset.continuous:
        columns['attribute'] = dataset.attributes
    for i, name in enumerate(dataset.feature_names):
        columns[name] = dataset.features[:, i]
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def split(dataset: Dataset, seed: int) -> Dataset:
    """Tag every row train/validation/test in the ratio 1/2 : 1/4 : 1/4.

    Ranking datasets are split by query so that a query never straddles
    splits; regression datasets, and ranking datasets made of one single
    query, are split by example.
    """
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")

    units, unit_of_row = (np.unique(dataset.query_ids, return_inverse=True)
                          if dataset.task == RANKING else (None, None))
    if units is None or len(units) == 1:
        units = np.arange(len(dataset))
        unit_of_row = units
    n = len(units)
    if n < 4:
        raise DataError(f"only {n} split units; need at least 4 for three non-empty splits")

    n_train = int(np.floor(n * 0.5 + 0.5))
    n_validation = int(np.floor(n * 0.25 + 0.5))
    order = make_rng(seed).permutation(n)
    unit_tags = np.empty(n, dtype=object)
    unit_tags[order[:n_train]] = TRAIN
    unit_tags[order[n_train:n_train + n_validation]] = VALIDATION
    unit_tags[order[n_train + n_validation:]] = TEST
    return dataset.with_split(unit_tags[unit_of_row])


@dataclass(frozen=True)
class Pair:
    better: int
    worse: int
    cell: Optional[Tuple[int, int]] = None
    tag: Optional[str] = None


@dataclass(frozen=True, eq=False)
class PairSet:
    """Comparable pairs as parallel index arrays into one Dataset.

    `row`/`col` hold the groups of the better and worse member (-1 when the
    dataset has no groups); `tag` is +1 when z(better) > z(worse), -1 when
    smaller and 0 for attribute ties or datasets without an attribute.
    Parity pairs store each cross-group couple once with row < col.
    """
    better: np.ndarray
    worse: np.ndarray
    row: np.ndarray
    col: np.ndarray
    tag: np.ndarray
    query: np.ndarray
    mode: str = SUPERVISED
    num_groups: int = 0
    _cells: Dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.better)

    def __iter__(self) -> Iterator[Pair]:
        for k in range(len(self)):
            yield self.pair(k)

    def pair(self, k: int) -> Pair:
        cell = (int(self.row[k]), int(self.col[k])) if self.num_groups > 0 else None
        tag = {1: GREATER, -1: LESS}.get(int(self.tag[k]))
        return Pair(better=int(self.better[k]), worse=int(self.worse[k]), cell=cell, tag=tag)

    def cell(self, i: int, j: int) -> np.ndarray:
        """Indices of the pairs in group-cell (i, j)"""
        key = (i, j)
        if key not in self._cells:
            self._cells[key] = np.flatnonzero((self.row == i) & (self.col == j))
        return self._cells[key]

    def tagged(self, tag: str) -> np.ndarray:
        key = tag
        if key not in self._cells:
            self._cells[key] = np.flatnonzero(self.tag == _TAG_CODES[tag])
        return self._cells[key]

    @property
    def cells(self) -> Dict[Union[Tuple[int, int], str], np.ndarray]:
        """Partition of the pair indices: group cells, or continuous tags (ties under 'tied')"""
        if self.num_groups > 0:
            return {(i, j): self.cell(i, j) for i in range(self.num_groups) for j in range(self.num_groups)}
        return {GREATER: self.tagged(GREATER), LESS: self.tagged(LESS), 'tied': np.flatnonzero(self.tag == 0)}

    def by_query(self) -> Dict[int, np.ndarray]:
        if len(self) == 0 or self.query[0] < 0:
            return {}
        queries, inverse = np.unique(self.query, return_inverse=True)
        order = np.argsort(inverse, kind='stable')
        bounds = np.cumsum(np.bincount(inverse, minlength=len(queries)))[:-1]
        return {int(q): idx for q, idx in zip(queries, np.split(order, bounds))}

    def subset(self, indices: np.ndarray) -> 'PairSet':
        return PairSet(
            better=self.better[indices],
            worse=self.worse[indices],
            row=self.row[indices],
            col=self.col[indices],
            tag=self.tag[indices],
            query=self.query[indices],
            mode=self.mode,
            num_groups=self.num_groups,
        )

    def stratified_batch(self, rng: np.random.Generator, size: int) -> 'PairSet':
        """Seeded minibatch with up to `size` pairs from every non-empty cell"""
        chosen = []
        for indices in self.cells.values():
            if len(indices) == 0:
                continue
            take = min(size, len(indices))
            chosen.append(np.sort(rng.choice(indices, size=take, replace=False)))
        if not chosen:
            return self
        return self.subset(np.concatenate(chosen))


def _build_pairs(dataset: Dataset, better: np.ndarray, worse: np.ndarray, mode: str) -> PairSet:
    better = np.asarray(better, dtype=np.int64)
    worse = np.asarray(worse, dtype=np.int64)
    if dataset.num_groups > 0:
        row, col = dataset.groups[better], dataset.groups[worse]
    else:
        row = col = np.full(len(better), -1, dtype=np.int64)
    if dataset.continuous and mode == SUPERVISED:
        tag = np.sign(dataset.attributes[better] - dataset.attributes[worse]).astype(np.int8)
    else:
        tag = np.zeros(len(better), dtype=np.int8)
    if dataset.query_ids is not None:
        query = dataset.query_ids[better]
    else:
        query = np.full(len(better), -1, dtype=np.int64)
    return PairSet(better=better, worse=worse, row=row, col=col, tag=tag, query=query,
                   mode=mode, num_groups=dataset.num_groups)


def _query_blocks(dataset: Dataset, indices: np.ndarray) -> List[np.ndarray]:
    queries = dataset.query_ids[indices]
    order = np.argsort(queries, kind='stable')
    _, starts = np.unique(queries[order], return_index=True)
    return np.split(indices[order], starts[1:]) if len(indices) else []


def enumerate_ranking_pairs(dataset: Dataset, split: Optional[str] = None) -> PairSet:
    """All same-query pairs with a strictly better label"""
    if dataset.task != RANKING:
        raise DataError("ranking pairs need a ranking dataset")
    better, worse = [], []
    for block in _query_blocks(dataset, dataset.indices(split)):
        y = dataset.labels[block]
        b, w = np.nonzero(y[:, None] > y[None, :])
        better.append(block[b])
        worse.append(block[w])
    if not better:
        return _build_pairs(dataset, np.empty(0), np.empty(0), SUPERVISED)
    return _build_pairs(dataset, np.concatenate(better), np.concatenate(worse), SUPERVISED)


def enumerate_regression_pairs(dataset: Dataset, split: Optional[str] = None,
                               max_pairs: Optional[int] = None, seed: int = 0) -> PairSet:
    """Ordered pairs with y > y'; a seeded uniform subsample when `max_pairs` is set.

    Pairs are addressed by rank so a subsample never materializes all N^2 pairs.
    """
    if dataset.task != REGRESSION:
        raise DataError("regression pairs need a regression dataset")
    indices = dataset.indices(split)
    order = indices[np.argsort(dataset.labels[indices], kind='stable')]
    y = dataset.labels[order]
    # pairs where order[k] is the better member: everything with a strictly smaller label
    below = np.searchsorted(y, y, side='left')
    ends = np.cumsum(below)
    total = int(ends[-1]) if len(ends) else 0

    if max_pairs is not None and max_pairs < total:
        ranks = np.sort(make_rng(seed).choice(total, size=max_pairs, replace=False))
    else:
        ranks = np.arange(total)
    better_pos = np.searchsorted(ends, ranks, side='right')
    offsets = ranks - (ends[better_pos] - below[better_pos])
    return _build_pairs(dataset, order[better_pos], order[offsets], SUPERVISED)


def enumerate_parity_pairs(dataset: Dataset, split: Optional[str] = None,
                           max_pairs: Optional[int] = None, seed: int = 0) -> PairSet:
    """Cross-group couples with no label condition, stored once with row < col.

    Ranking datasets only couple candidates of the same query.
    """
    if dataset.num_groups <= 0:
        raise DataError("parity pairs need discrete groups")
    indices = dataset.indices(split)
    blocks = _query_blocks(dataset, indices) if dataset.task == RANKING else [indices]

    lower, upper = [], []
    for block in blocks:
        groups = dataset.groups[block]
        for i in range(dataset.num_groups):
            members_i = block[groups == i]
            for j in range(i + 1, dataset.num_groups):
                members_j = block[groups == j]
                lower.append(np.repeat(members_i, len(members_j)))
                upper.append(np.tile(members_j, len(members_i)))
    if not lower:
        return _build_pairs(dataset, np.empty(0), np.empty(0), PARITY)
    lower, upper = np.concatenate(lower), np.concatenate(upper)
    if max_pairs is not None and max_pairs < len(lower):
        keep = np.sort(make_rng(seed).choice(len(lower), size=max_pairs, replace=False))
        lower, upper = lower[keep], upper[keep]
    return _build_pairs(dataset, lower, upper, PARITY)


def enumerate_pairs(dataset: Dataset, split: Optional[str] = None,
                    max_pairs: Optional[int] = None, seed: int = 0) -> PairSet:
    """Supervised pairs for the dataset's task"""
    if dataset.task == RANKING:
        return enumerate_ranking_pairs(dataset, split)
    return enumerate_regression_pairs(dataset, split, max_pairs=max_pairs, seed=seed)
