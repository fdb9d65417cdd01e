"""Shared builders for observation tables and synthetic configurations."""

import numpy as np
import pytest

from nmekit.data import ObservationTable
from nmekit.simulate import GroupTruth, SimConfig, generate


def build_table(y, X=None, exposure=None, drivers=None, weeks=None,
                feature_names=None, target_col=0):
    """Assemble an ObservationTable around a single event column.

    Defaults: one driver per row, week 0, unit exposure, no covariates.
    When ``drivers`` repeats ids, weeks are numbered within each driver so
    the (driver, week) pairs stay unique.
    """
    y = np.asarray(y, dtype=int)
    n = y.shape[0]
    if X is None:
        X = np.zeros((n, 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if feature_names is None:
        feature_names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    if exposure is None:
        exposure = np.ones(n)
    exposure = np.asarray(exposure, dtype=float)
    if drivers is None:
        drivers = np.array([f"d{i:04d}" for i in range(n)], dtype=object)
    else:
        drivers = np.asarray(drivers, dtype=object)
    if weeks is None:
        seen = {}
        weeks = np.empty(n, dtype=int)
        for i, d in enumerate(drivers):
            weeks[i] = seen.get(d, 0)
            seen[d] = weeks[i] + 1
    else:
        weeks = np.asarray(weeks, dtype=int)
    counts = np.zeros((n, 6), dtype=int)
    counts[:, target_col] = y
    return ObservationTable(
        driver_ids=drivers,
        weeks=weeks,
        exposure=exposure,
        counts=counts,
        covariates=X,
        feature_names=tuple(feature_names),
    )


@pytest.fixture
def table_factory():
    return build_table


def two_group_zip_config(n_drivers=120, weeks=8, seed=0,
                         omega=(0.6, 0.4), exposure_log_mean=0.0,
                         exposure_log_sd=0.25):
    """Small, well-separated two-group ZIP truth for EM tests.

    Unit-scale exposure keeps the counts small and the fits fast; the
    intercepts then act directly as weekly rates.
    """
    groups = [
        GroupTruth(family="zip", mean_intercept=np.log(0.5),
                   mean_coefficients=[0.5, -0.5, 0.5],
                   inflation_intercept=np.log(0.6 / 0.4)),
        GroupTruth(family="zip", mean_intercept=np.log(5.0),
                   mean_coefficients=[-0.5, 0.5, -0.5],
                   inflation_intercept=np.log(0.2 / 0.8)),
    ]
    return SimConfig(
        n_drivers=n_drivers,
        weeks=weeks,
        omega=list(omega),
        groups=groups,
        n_features=3,
        exposure_log_mean=exposure_log_mean,
        exposure_log_sd=exposure_log_sd,
        seed=seed,
    )


@pytest.fixture(scope="session")
def two_group_data():
    """One medium 2-group ZIP dataset shared by the mixture/sweep tests."""
    config = two_group_zip_config(n_drivers=120, weeks=8, seed=11)
    table, labels = generate(config)
    return config, table, labels


@pytest.fixture(scope="session")
def single_zip_data():
    """One-group zero-inflated dataset for component-level fits."""
    groups = [GroupTruth(family="zip", mean_intercept=np.log(2.0),
                         mean_coefficients=[0.4, -0.3],
                         inflation_intercept=np.log(0.4 / 0.6))]
    config = SimConfig(
        n_drivers=150, weeks=8, omega=[1.0], groups=groups, n_features=2,
        exposure_log_mean=0.0, exposure_log_sd=0.25, seed=5,
    )
    table, labels = generate(config)
    return config, table, labels
