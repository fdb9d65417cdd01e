"""Weekly driver observation tables: ingest, standardization, feature
selection, and grouped cross-validation splits.

The expected CSV layout has one row per driver-week:

    driver_id, week, total_distance, sum_harsh_braking, sum_harsh_acceleration,
    sum_speeding_serious, sum_forward_collision, sum_lane_departure,
    sum_too_close_distance, <covariate columns...>

``total_distance`` is the weekly exposure in kilometres.  Every numeric
column that is not an id, the week index, the exposure, or one of the six
event counts is treated as a candidate covariate.  Claim-related columns are
ignored entirely.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    EmptyTable,
    FeatureMismatch,
    MissingColumn,
    NoFeaturesRemain,
    ParseError,
    TooFewDrivers,
    ZeroVarianceWarning,
)

logger = logging.getLogger(__name__)

EVENT_NAMES = (
    "harsh_braking",
    "harsh_acceleration",
    "speeding_serious",
    "forward_collision",
    "lane_departure",
    "too_close_distance",
)
NME_TOTAL = "nme_total"
TARGET_CHOICES = EVENT_NAMES + (NME_TOTAL,)

ID_COLUMN = "driver_id"
WEEK_COLUMN = "week"
EXPOSURE_COLUMN = "total_distance"
COUNT_COLUMNS = {name: "sum_" + name for name in EVENT_NAMES}

# Claim-history fields are out of scope and never become covariates.
IGNORED_COLUMNS = ("claims_count", "exposure_in_weeks")


def count_column(target):
    """Map a target name to its count column; nme_total has no single column."""
    if target == NME_TOTAL:
        return None
    if target not in COUNT_COLUMNS:
        raise KeyError(f"unknown target {target!r}; expected one of {TARGET_CHOICES}")
    return COUNT_COLUMNS[target]


@dataclass
class LoadReport:
    n_rows_read: int = 0
    n_dropped_exposure: int = 0
    n_dropped_missing_count: int = 0
    n_dropped_missing_covariate: int = 0
    n_kept: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class DriverWeek:
    """One driver-week observation in record form."""

    driver_id: str
    week_index: int
    exposure_km: float
    counts: dict
    covariates: np.ndarray


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(eq=False)
class ObservationTable:
    """Column-oriented driver-week table.  Arrays are read-only after
    construction; derive new tables instead of mutating."""

    driver_ids: np.ndarray
    weeks: np.ndarray
    exposure: np.ndarray
    counts: np.ndarray  # shape (n, 6), columns ordered as EVENT_NAMES
    covariates: np.ndarray  # shape (n, k)
    feature_names: tuple
    load_report: LoadReport | None = field(default=None, compare=False)

    def __post_init__(self):
        self.driver_ids = _frozen(np.asarray(self.driver_ids, dtype=object))
        self.weeks = _frozen(np.asarray(self.weeks, dtype=np.int64))
        self.exposure = _frozen(np.asarray(self.exposure, dtype=float))
        self.counts = _frozen(np.asarray(self.counts, dtype=np.int64))
        self.covariates = _frozen(np.asarray(self.covariates, dtype=float))
        self.feature_names = tuple(self.feature_names)

        n = len(self.driver_ids)
        for name, arr in (("weeks", self.weeks), ("exposure", self.exposure)):
            if len(arr) != n:
                raise DataError(f"{name} length {len(arr)} != {n} rows")
        if self.counts.shape != (n, len(EVENT_NAMES)):
            raise DataError(f"counts must have shape ({n}, {len(EVENT_NAMES)})")
        if self.covariates.shape[0] != n or self.covariates.ndim != 2:
            raise DataError("covariates must be a 2-d array with one row per observation")
        if self.covariates.shape[1] != len(self.feature_names):
            raise DataError("feature_names must match covariate columns")
        if n and (not np.all(np.isfinite(self.exposure)) or np.any(self.exposure <= 0)):
            raise DataError("exposure must be positive and finite")
        if n and np.any(self.counts < 0):
            raise DataError("event counts must be non-negative")
        pairs = set()
        for d, w in zip(self.driver_ids, self.weeks):
            key = (d, int(w))
            if key in pairs:
                raise DataError(f"duplicate driver-week pair {key}")
            pairs.add(key)

    @property
    def n_rows(self):
        return len(self.driver_ids)

    @property
    def n_features(self):
        return self.covariates.shape[1]

    @property
    def nme_total(self):
        return self.counts.sum(axis=1)

    def target_values(self, target):
        if target == NME_TOTAL:
            return self.nme_total
        if target not in EVENT_NAMES:
            raise KeyError(f"unknown target {target!r}; expected one of {TARGET_CHOICES}")
        return self.counts[:, EVENT_NAMES.index(target)]

    def driver_index(self):
        """Sorted unique driver ids and the per-row code into that list."""
        ids, codes = np.unique(self.driver_ids.astype(str), return_inverse=True)
        return ids, codes

    def subset(self, mask):
        mask = np.asarray(mask)
        return ObservationTable(
            driver_ids=self.driver_ids[mask],
            weeks=self.weeks[mask],
            exposure=self.exposure[mask],
            counts=self.counts[mask],
            covariates=self.covariates[mask],
            feature_names=self.feature_names,
        )

    def row(self, i):
        return DriverWeek(
            driver_id=str(self.driver_ids[i]),
            week_index=int(self.weeks[i]),
            exposure_km=float(self.exposure[i]),
            counts={name: int(self.counts[i, j]) for j, name in enumerate(EVENT_NAMES)},
            covariates=self.covariates[i].copy(),
        )

    def iter_rows(self):
        for i in range(self.n_rows):
            yield self.row(i)


@dataclass
class FeatureStats:
    """Population mean and standard deviation for the selected features, in
    selection order.  Applies train-split statistics to any compatible table."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.names = tuple(self.names)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if not (len(self.names) == len(self.mean) == len(self.std)):
            raise DataError("feature stats arrays must align with names")
        if np.any(self.std <= 0):
            raise DataError("selected features must have positive standard deviation")

    def to_dict(self):
        return {
            "names": list(self.names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(names=tuple(d["names"]), mean=d["mean"], std=d["std"])


def _first_bad_cell(raw, numeric, column):
    bad = raw.notna() & raw.astype(str).str.strip().ne("") & numeric.isna()
    if bad.any():
        # +2: one for the header line, one for 1-based numbering
        pos = int(np.nonzero(bad.to_numpy())[0][0])
        raise ParseError(pos + 2, column, f"not numeric: {raw.iloc[pos]!r}")


def load_csv(path, target_names=None):
    """Read a driver-week CSV into an ObservationTable.

    Rows with non-positive or missing exposure, a missing event count, or a
    missing covariate value are dropped and tallied in ``table.load_report``.
    Malformed cells (non-numeric text, fractional or negative counts) raise
    ParseError with the offending file line and column.
    """
    if target_names is not None:
        for t in target_names:
            if t not in TARGET_CHOICES:
                raise KeyError(f"unknown target {t!r}; expected one of {TARGET_CHOICES}")

    try:
        df = pd.read_csv(path, dtype={ID_COLUMN: str}, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise DataError(f"cannot parse CSV {path}: {exc}") from exc
    df.columns = [c.strip() for c in df.columns]

    required = [ID_COLUMN, WEEK_COLUMN, EXPOSURE_COLUMN] + list(COUNT_COLUMNS.values())
    for col in required:
        if col not in df.columns:
            raise MissingColumn(col)
    feature_cols = [c for c in df.columns if c not in required and c not in IGNORED_COLUMNS]
    if not feature_cols:
        raise MissingColumn("<at least one covariate column>")

    report = LoadReport(n_rows_read=len(df))
    if len(df) == 0:
        raise EmptyTable(f"no data rows in {path}")

    numeric = {}
    for col in [WEEK_COLUMN, EXPOSURE_COLUMN] + list(COUNT_COLUMNS.values()) + feature_cols:
        converted = pd.to_numeric(df[col], errors="coerce")
        _first_bad_cell(df[col], converted, col)
        numeric[col] = converted

    week = numeric[WEEK_COLUMN]
    bad_week = week.notna() & ((week < 0) | (week != np.floor(week)))
    if bad_week.any():
        pos = int(np.nonzero(bad_week.to_numpy())[0][0])
        raise ParseError(pos + 2, WEEK_COLUMN, "week index must be a non-negative integer")
    for name, col in COUNT_COLUMNS.items():
        cnt = numeric[col]
        bad = cnt.notna() & ((cnt < 0) | (cnt != np.floor(cnt)))
        if bad.any():
            pos = int(np.nonzero(bad.to_numpy())[0][0])
            raise ParseError(pos + 2, col, "counts must be non-negative integers")

    exposure = numeric[EXPOSURE_COLUMN]
    drop_exposure = exposure.isna() | (exposure <= 0)
    count_frame = pd.DataFrame({c: numeric[c] for c in COUNT_COLUMNS.values()})
    drop_missing_count = count_frame.isna().any(axis=1) & ~drop_exposure
    cov_frame = pd.DataFrame({c: numeric[c] for c in feature_cols})
    drop_missing_cov = (
        cov_frame.isna().any(axis=1) | df[ID_COLUMN].isna() | week.isna()
    ) & ~drop_exposure & ~drop_missing_count

    report.n_dropped_exposure = int(drop_exposure.sum())
    report.n_dropped_missing_count = int(drop_missing_count.sum())
    report.n_dropped_missing_covariate = int(drop_missing_cov.sum())

    keep = ~(drop_exposure | drop_missing_count | drop_missing_cov)
    report.n_kept = int(keep.sum())
    if report.n_kept == 0:
        raise EmptyTable(f"no valid rows remain in {path}")
    if report.n_kept < report.n_rows_read:
        logger.info(
            "dropped %d of %d rows at ingest (exposure %d, missing count %d, missing covariate %d)",
            report.n_rows_read - report.n_kept,
            report.n_rows_read,
            report.n_dropped_exposure,
            report.n_dropped_missing_count,
            report.n_dropped_missing_covariate,
        )

    kept = np.nonzero(keep.to_numpy())[0]
    table = ObservationTable(
        driver_ids=df[ID_COLUMN].to_numpy(dtype=object)[kept],
        weeks=week.to_numpy()[kept].astype(np.int64),
        exposure=exposure.to_numpy()[kept],
        counts=np.column_stack(
            [numeric[COUNT_COLUMNS[name]].to_numpy()[kept] for name in EVENT_NAMES]
        ).astype(np.int64),
        covariates=np.column_stack([numeric[c].to_numpy()[kept] for c in feature_cols]),
        feature_names=tuple(feature_cols),
        load_report=report,
    )
    return table


def write_csv(table, path):
    """Write a table back out in the standard column layout."""
    frame = {
        ID_COLUMN: table.driver_ids,
        WEEK_COLUMN: table.weeks,
        EXPOSURE_COLUMN: table.exposure,
    }
    for j, name in enumerate(EVENT_NAMES):
        frame[COUNT_COLUMNS[name]] = table.counts[:, j]
    for j, name in enumerate(table.feature_names):
        frame[name] = table.covariates[:, j]
    pd.DataFrame(frame).to_csv(path, index=False)


def standardize(table, stats=None):
    """Center and scale covariates to zero mean, unit variance.

    Without ``stats`` the population moments of ``table`` are used; features
    with no variation are excluded with a ZeroVarianceWarning.  With ``stats``
    (typically from a training split) the stored affine map is applied and
    the table is restricted to the stored feature set, in stored order.
    Returns the transformed table and the stats that were applied.
    """
    if stats is None:
        mean = table.covariates.mean(axis=0)
        std = table.covariates.std(axis=0)
        keep = []
        for j, name in enumerate(table.feature_names):
            if std[j] > 0:
                keep.append(j)
            else:
                warnings.warn(f"feature {name!r} has zero variance; excluded", ZeroVarianceWarning)
        if not keep:
            raise NoFeaturesRemain("every feature has zero variance")
        stats = FeatureStats(
            names=tuple(table.feature_names[j] for j in keep),
            mean=mean[keep],
            std=std[keep],
        )

    try:
        cols = [table.feature_names.index(name) for name in stats.names]
    except ValueError as exc:
        raise FeatureMismatch(f"table lacks feature required by stats: {exc}") from exc
    z = (table.covariates[:, cols] - stats.mean) / stats.std
    out = ObservationTable(
        driver_ids=table.driver_ids,
        weeks=table.weeks,
        exposure=table.exposure,
        counts=table.counts,
        covariates=z,
        feature_names=stats.names,
        load_report=table.load_report,
    )
    return out, stats


def filter_features(table, target, cap=10):
    """Rank features by absolute Pearson correlation with the target rate.

    The rate is count / exposure.  Zero-variance features are dropped, the
    remainder are ranked by |corr| computed on the standardized feature
    (ties broken by column order), and the top ``cap`` are kept.  Returns
    FeatureStats restricted to the selection, ready for ``standardize``.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    y = table.target_values(target)
    rate = y / table.exposure

    mean = table.covariates.mean(axis=0)
    std = table.covariates.std(axis=0)
    candidates = [j for j in range(table.n_features) if std[j] > 0]
    if not candidates:
        raise NoFeaturesRemain("every feature has zero variance")

    rate_centered = rate - rate.mean()
    rate_norm = np.sqrt(np.sum(rate_centered**2))
    corrs = {}
    for j in candidates:
        z = (table.covariates[:, j] - mean[j]) / std[j]
        if rate_norm == 0:
            corrs[j] = 0.0
        else:
            corrs[j] = float(np.dot(z, rate_centered) / (np.sqrt(np.sum(z**2)) * rate_norm))

    ranked = sorted(candidates, key=lambda j: (-abs(corrs[j]), j))
    chosen = ranked[: min(cap, len(ranked))]
    logger.debug(
        "feature filter kept %d of %d: %s",
        len(chosen),
        table.n_features,
        [table.feature_names[j] for j in chosen],
    )
    return FeatureStats(
        names=tuple(table.feature_names[j] for j in chosen),
        mean=mean[chosen],
        std=std[chosen],
    )


@dataclass
class FoldAssignment:
    """Driver-level fold labels; every row of a driver shares its fold."""

    fold_of_driver: dict
    k: int
    seed: int
    target: str

    def fold_of_rows(self, table):
        try:
            return np.array([self.fold_of_driver[str(d)] for d in table.driver_ids])
        except KeyError as exc:
            raise FeatureMismatch(f"table has driver absent from fold assignment: {exc}") from exc

    def test_mask(self, table, fold):
        return self.fold_of_rows(table) == fold

    def train_mask(self, table, fold):
        return self.fold_of_rows(table) != fold


def stratified_group_kfold(table, target, k=5, seed=0):
    """Partition drivers into ``k`` folds, stratified by whether the driver
    has any non-zero target count.

    Drivers in each stratum are shuffled with the seeded generator and dealt
    round-robin; the deal pointer continues from one stratum into the next so
    fold sizes and stratum proportions stay within one driver of balance.
    """
    ids, codes = table.driver_index()
    if len(ids) < k:
        raise TooFewDrivers(len(ids), k)
    y = table.target_values(target)
    has_nonzero = np.zeros(len(ids), dtype=bool)
    np.logical_or.at(has_nonzero, codes, y > 0)

    rng = np.random.default_rng(seed)
    fold_of = {}
    pointer = 0
    for stratum_mask in (has_nonzero, ~has_nonzero):
        members = ids[stratum_mask]
        for d in members[rng.permutation(len(members))]:
            fold_of[str(d)] = pointer % k
            pointer += 1
    return FoldAssignment(fold_of_driver=fold_of, k=k, seed=seed, target=target)
