"""Evaluation metrics and the cross-validated report.

In-sample information criteria come from the full-data fit; deviance and
RMSE are reported per held-out fold (normalized per observation for
deviance); Pearson chi-square, the likelihood-ratio pseudo R^2, and the
zero-probability Brier score are pooled over all held-out predictions.  The
pseudo R^2 reference is an intercept-only Poisson with the same exposure
offset, refit on each training split.
"""

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import xlogy

from .errors import DegenerateNull, DomainError
from .pipeline import fit_null_poisson, fit_pipeline, null_loglik_on

logger = logging.getLogger(__name__)


def aic_bic(loglik, n_params, n_obs):
    """(AIC, BIC) = (2p - 2l, p ln n - 2l)."""
    if n_obs < 1:
        raise DomainError("n_obs must be positive")
    aic = 2.0 * n_params - 2.0 * loglik
    bic = n_params * np.log(n_obs) - 2.0 * loglik
    return float(aic), float(bic)


def poisson_deviance(y, mu):
    """Total Poisson deviance 2 sum[y ln(y/mu) - (y - mu)]; the y ln(y/mu)
    term is zero at y = 0."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise DomainError("predictions must be positive and finite")
    return float(2.0 * np.sum(xlogy(y, y / np.where(y > 0, mu, 1.0)) - (y - mu)))


def rmse(y, mu):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(np.sqrt(np.mean((y - mu) ** 2)))


def pearson_chi2(y, mu):
    """Pooled Pearson statistic sum (y - mu)^2 / mu."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise DomainError("predictions must be positive and finite")
    return float(np.sum((y - mu) ** 2 / mu))


def mcfadden_r2(loglik_model, loglik_null):
    """Likelihood-ratio pseudo R^2, 1 - l_model / l_null."""
    if not loglik_null < 0:
        raise DegenerateNull(f"null log-likelihood must be negative, got {loglik_null}")
    return float(1.0 - loglik_model / loglik_null)


def brier_zero(y, p_zero):
    """Mean squared error of the zero-count probability forecast."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p_zero, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise DomainError("zero probabilities must lie in [0, 1]")
    return float(np.mean(((y == 0).astype(float) - p) ** 2))


@dataclass
class MetricsReport:
    target: str
    aic: float
    bic: float
    loglik: float
    n_params: int
    n_obs: int
    deviance_mean: float
    deviance_std: float
    rmse_mean: float
    rmse_std: float
    pearson_chi2: float
    mcfadden_r2: float
    brier_zero: float
    fold_deviance: list = field(default_factory=list)
    fold_rmse: list = field(default_factory=list)
    n_folds: int = 0
    status: str = "ok"
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _aggregate(values):
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    # population std; with K folds this is the spread of the K fold values
    return float(arr.mean()), float(arr.std())


def evaluate(fitted, table, folds=None):
    """Build a MetricsReport for a fitted model on a raw table.

    With ``folds`` (a FoldAssignment), each training split is refit through
    the full pipeline and scored on its held-out fold; without folds the
    model is scored in-sample as a single fold.  A failing fold downgrades
    the report to status "partial" instead of aborting.
    """
    target = fitted.target
    aic, bic = aic_bic(fitted.loglik, fitted.n_params, table.n_rows)

    fold_dev, fold_rmse, notes = [], [], []
    pooled_y, pooled_mu, pooled_p0 = [], [], []
    ll_model = 0.0
    ll_null = 0.0
    n_planned = 1 if folds is None else folds.k

    for f in range(n_planned):
        try:
            if folds is None:
                fit_f, test = fitted, table
                train = table
            else:
                train = table.subset(folds.train_mask(table, f))
                test = table.subset(folds.test_mask(table, f))
                fit_f = fit_pipeline(train, fitted.spec)
            y = test.target_values(target).astype(float)
            mu = fit_f.predict_mean(test)
            p0 = fit_f.zero_prob(test)
            fold_dev.append(poisson_deviance(y, mu) / len(y))
            fold_rmse.append(rmse(y, mu))
            pooled_y.append(y)
            pooled_mu.append(mu)
            pooled_p0.append(p0)
            ll_model += fit_f.loglik_on(test)
            null_params = fit_null_poisson(train, target)
            ll_null += null_loglik_on(null_params, test, target)
        except Exception as exc:  # a bad fold should not sink the report
            logger.warning("fold %d failed: %s", f, exc)
            notes.append(f"fold {f} failed: {exc}")

    status = "ok" if len(fold_dev) == n_planned else "partial"
    if pooled_y:
        y = np.concatenate(pooled_y)
        mu = np.concatenate(pooled_mu)
        p0 = np.concatenate(pooled_p0)
        chi2 = pearson_chi2(y, mu)
        brier = brier_zero(y, p0)
        if np.isfinite(ll_model) and ll_null < 0:
            mcf = mcfadden_r2(ll_model, ll_null)
        else:
            mcf = float("nan")
            notes.append("pseudo R^2 undefined for this fit")
    else:
        chi2 = brier = mcf = float("nan")

    dev_mean, dev_std = _aggregate(fold_dev)
    rmse_mean, rmse_std = _aggregate(fold_rmse)
    return MetricsReport(
        target=target,
        aic=aic,
        bic=bic,
        loglik=float(fitted.loglik),
        n_params=int(fitted.n_params),
        n_obs=int(table.n_rows),
        deviance_mean=dev_mean,
        deviance_std=dev_std,
        rmse_mean=rmse_mean,
        rmse_std=rmse_std,
        pearson_chi2=chi2,
        mcfadden_r2=mcf,
        brier_zero=brier,
        fold_deviance=[float(v) for v in fold_dev],
        fold_rmse=[float(v) for v in fold_rmse],
        n_folds=len(fold_dev),
        status=status,
        notes=notes,
    )


__all__ = [
    "aic_bic",
    "poisson_deviance",
    "rmse",
    "pearson_chi2",
    "mcfadden_r2",
    "brier_zero",
    "MetricsReport",
    "evaluate",
]
