"""Model specification, the filter/standardize/fit pipeline, and a uniform
wrapper around fitted single components and mixtures.

A FittedModel carries the feature statistics of its training split, so
applying it to raw data always reproduces the training-time transform.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as data_mod
from .components import (
    ComponentParams,
    component_logpmf,
    component_loglik,
    fit_component,
    predicted_mean,
    zero_prob,
)
from .data import FeatureStats, ObservationTable, filter_features, standardize
from .errors import ConfigError, DomainError
from .mixture import (
    EmConfig,
    MixtureModel,
    fit_em,
    mixture_loglik,
    mixture_zero_prob,
    predict_mean as mixture_predict_mean,
)

FAMILY_CHOICES = ("poisson", "zip", "gzip", "gzigp")


@dataclass
class ModelSpec:
    """Everything needed to reproduce one model fit."""

    family: str
    target: str
    n_groups: int = 1
    theta: object = "free"  # "free" or a fixed value; gzigp only
    inflation: str = "intercept"
    max_features: int = 10
    seed: int = 0
    n_restarts: int = 3
    max_iter: int = 800
    epsilon: float = 1e-4
    max_em_iters: int = 100
    mstep_max_iters: int = 200

    def __post_init__(self):
        if self.family not in FAMILY_CHOICES:
            raise ConfigError(f"family must be one of {FAMILY_CHOICES}, got {self.family!r}")
        if self.family in ("poisson", "zip") and self.n_groups != 1:
            raise ConfigError(f"{self.family} is a single-group model")
        if self.n_groups < 1:
            raise ConfigError("n_groups must be >= 1")
        if self.inflation not in ("intercept", "full"):
            raise ConfigError("inflation must be 'intercept' or 'full'")
        if self.max_features < 1:
            raise ConfigError("max_features must be >= 1")
        if self.theta != "free":
            try:
                self.theta = float(self.theta)
            except (TypeError, ValueError):
                raise ConfigError(f"theta must be 'free' or a number, got {self.theta!r}") from None
            if not -1.0 < self.theta < 1.0:
                raise ConfigError(f"fixed theta must lie in (-1, 1), got {self.theta}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def em_config(spec):
    if spec.family == "gzip":
        family, dispersion = "zip", "free"
    else:
        family, dispersion = "zigp", spec.theta
    return EmConfig(
        n_groups=spec.n_groups,
        family=family,
        inflation=spec.inflation,
        dispersion=dispersion,
        epsilon=spec.epsilon,
        max_em_iters=spec.max_em_iters,
        mstep_max_iters=spec.mstep_max_iters,
        n_restarts=spec.n_restarts,
        seed=spec.seed,
    )


@dataclass
class FittedModel:
    spec: ModelSpec
    stats: FeatureStats
    model: object  # ComponentParams or MixtureModel
    target: str = field(default="")

    def __post_init__(self):
        if not self.target:
            self.target = self.spec.target

    @property
    def kind(self):
        return "mixture" if isinstance(self.model, MixtureModel) else "component"

    @property
    def loglik(self):
        return self.model.loglik

    @property
    def n_params(self):
        return self.model.n_params

    @property
    def converged(self):
        return self.model.converged

    def _standardized(self, table):
        std, _ = standardize(table, self.stats)
        return std

    def predict_mean(self, table, membership="auto"):
        std = self._standardized(table)
        if self.kind == "mixture":
            return mixture_predict_mean(self.model, std, membership=membership)
        return np.asarray(predicted_mean(self.model, std.covariates, std.exposure))

    def zero_prob(self, table, membership="auto"):
        std = self._standardized(table)
        if self.kind == "mixture":
            return mixture_zero_prob(self.model, std, membership=membership)
        return np.asarray(zero_prob(self.model, std.covariates, std.exposure))

    def loglik_on(self, table):
        """Total log-likelihood on (possibly new) data; mixtures treat every
        driver's group as latent with prior weights."""
        std = self._standardized(table)
        if self.kind == "mixture":
            return mixture_loglik(self.model, std, self.target)
        return component_loglik(self.model, std, self.target)

    def row_logpmf(self, table):
        std = self._standardized(table)
        if self.kind == "mixture":
            raise DomainError("row_logpmf is defined for single components only")
        return component_logpmf(self.model, std.target_values(self.target), std.covariates, std.exposure)

    def to_dict(self, include_responsibilities=True):
        if self.kind == "mixture":
            model_dict = self.model.to_dict(include_responsibilities=include_responsibilities)
        else:
            model_dict = self.model.to_dict()
        return {
            "format": "nmekit-model",
            "kind": self.kind,
            "target": self.target,
            "spec": self.spec.to_dict(),
            "feature_stats": self.stats.to_dict(),
            "model": model_dict,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "nmekit-model":
            raise ConfigError("not a model file (missing format marker)")
        spec = ModelSpec.from_dict(d["spec"])
        stats = FeatureStats.from_dict(d["feature_stats"])
        if d["kind"] == "mixture":
            model = MixtureModel.from_dict(d["model"])
        else:
            model = ComponentParams.from_dict(d["model"])
        return cls(spec=spec, stats=stats, model=model, target=d.get("target", spec.target))


def fit_pipeline(table, spec):
    """Filter features, standardize with the resulting stats, and fit."""
    stats = filter_features(table, spec.target, cap=spec.max_features)
    std, _ = standardize(table, stats)
    if spec.family == "poisson":
        model = fit_component(std, spec.target, "poisson", max_iter=spec.max_iter)
    elif spec.family == "zip":
        model = fit_component(
            std, spec.target, "zip", inflation=spec.inflation, max_iter=spec.max_iter
        )
    else:
        model = fit_em(std, spec.target, em_config(spec))
    return FittedModel(spec=spec, stats=stats, model=model)


def strip_features(table):
    """Copy of the table with an empty covariate block (for null models)."""
    return ObservationTable(
        driver_ids=table.driver_ids,
        weeks=table.weeks,
        exposure=table.exposure,
        counts=table.counts,
        covariates=np.zeros((table.n_rows, 0)),
        feature_names=(),
    )


def fit_null_poisson(table, target, max_iter=200):
    """Intercept-only Poisson with the exposure offset; the reference model
    for the likelihood-ratio pseudo R^2."""
    return fit_component(strip_features(table), target, "poisson", max_iter=max_iter)


def null_loglik_on(null_params, table, target):
    return component_loglik(null_params, strip_features(table), target)


def save_model(fitted, path, manifest=None, include_responsibilities=True):
    payload = {
        "manifest": manifest,
        "result": fitted.to_dict(include_responsibilities=include_responsibilities),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_model(path):
    with open(path) as fh:
        payload = json.load(fh)
    if "result" not in payload:
        raise ConfigError(f"{path} is not a model file")
    return FittedModel.from_dict(payload["result"])
