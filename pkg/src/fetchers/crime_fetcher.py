from typing import List, Tuple
import asyncio
import io
import logging
import os
import re

import numpy as np
import pandas as pd

from .base_fetcher import BaseFetcher
from ..dataset import RANKING, REGRESSION, Dataset, write_csv
from ..errors import DataError

logger = logging.getLogger(__name__)

BASE_URL = 'https://archive.ics.uci.edu/ml/machine-learning-databases/communities'
DATA_URL = f'{BASE_URL}/communities.data'
NAMES_URL = f'{BASE_URL}/communities.names'

NON_PREDICTIVE = ('state', 'county', 'community', 'communityname', 'fold')
TARGET = 'ViolentCrimesPerPop'
PROTECTED = 'racepctblack'
HIGH_CRIME_QUANTILE = 0.7

_ATTRIBUTE_LINE = re.compile(r'^@attribute\s+(\S+)\s+', re.IGNORECASE)


def parse_attribute_names(names_text: str) -> List[str]:
    """Column names from the `@attribute` lines of the UCI description file"""
    names = [m.group(1) for m in map(_ATTRIBUTE_LINE.match, names_text.splitlines()) if m]
    if not names:
        raise DataError("attribute description lists no columns")
    return names


def crime_frame(data_text: str, names: List[str]) -> pd.DataFrame:
    """Predictive columns without missing values, plus the target"""
    frame = pd.read_csv(io.StringIO(data_text), header=None, na_values='?', index_col=False,
                        skipinitialspace=True, dtype=str, keep_default_na=False)
    if frame.shape[1] != len(names):
        raise DataError(f"crime data has {frame.shape[1]} columns, description lists {len(names)}")
    frame.columns = names
    missing = [c for c in (TARGET, PROTECTED) if c not in names]
    if missing:
        raise DataError(f"crime data lacks columns {', '.join(missing)}")
    frame = frame.drop(columns=[c for c in NON_PREDICTIVE if c in names])
    frame = frame.dropna(axis=1)
    dropped = len(names) - len(NON_PREDICTIVE) - frame.shape[1]
    logger.info("Dropped %d columns with missing values", dropped)
    return frame.apply(pd.to_numeric, errors='raise')


def build_crime_datasets(frame: pd.DataFrame) -> Tuple[Dataset, Dataset]:
    """(ranking, regression) datasets with the protected share as continuous attribute.

    The ranking labels put communities above the 70th percentile of the
    crime rate at +1 and the rest at -1, all in one query.
    """
    rate = frame[TARGET].to_numpy(dtype=float)
    features = frame.drop(columns=[TARGET])
    feature_names = tuple(features.columns)
    attributes = frame[PROTECTED].to_numpy(dtype=float)
    threshold = np.quantile(rate, HIGH_CRIME_QUANTILE)
    labels = np.where(rate > threshold, 1.0, -1.0)

    ranking = Dataset(features=features.to_numpy(dtype=float), labels=labels, task=RANKING,
                      query_ids=np.zeros(len(rate), dtype=np.int64), attributes=attributes,
                      continuous=True, feature_names=feature_names)
    regression = Dataset(features=features.to_numpy(dtype=float), labels=rate, task=REGRESSION,
                         attributes=attributes, continuous=True, feature_names=feature_names)
    return ranking, regression


class CrimeFetcher(BaseFetcher):
    """UCI Communities and Crime"""

    name = 'crime'

    async def fetch(self, out_dir: str) -> List[str]:
        async with self.get_session() as session:
            names_text, data_text = await asyncio.gather(
                self.fetch_text(session, NAMES_URL),
                self.fetch_text(session, DATA_URL),
            )
        ranking, regression = build_crime_datasets(crime_frame(data_text, parse_attribute_names(names_text)))

        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, 'crime_ranking.csv'), os.path.join(out_dir, 'crime_regression.csv')]
        write_csv(ranking, paths[0])
        write_csv(regression, paths[1])
        logger.info("Wrote %d communities with %d features", len(ranking), ranking.dim)
        return paths
