"""Synthetic driver-week generation with known ground truth, plus the
parameter-recovery report used to validate fits against that truth.

Counts are drawn exactly from the model families: structural zeros by a
Bernoulli on pi(x), Poisson counts directly, and generalized-Poisson counts
by inversion of the cumulative pmf.
"""

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from .data import EVENT_NAMES, NME_TOTAL, ObservationTable, TARGET_CHOICES
from .errors import DataError, GMismatch, SupportExhausted
from .pmf import gp_logpmf, poisson_logpmf, zigp_logpmf, zip_logpmf

# Weekly exposure defaults: log-normal with median 700 km, matching the
# roughly 100-km-per-day scale of commercial fleet data.
DEFAULT_EXPOSURE_LOG_MEAN = float(np.log(700.0))
DEFAULT_EXPOSURE_LOG_SD = 0.5


@dataclass
class GroupTruth:
    family: str = "zip"  # poisson, zip, or zigp
    mean_intercept: float = 0.0
    mean_coefficients: list = field(default_factory=list)
    inflation_intercept: float | None = None
    inflation_coefficients: list | None = None
    theta: float = 0.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SimConfig:
    n_drivers: int
    weeks: object  # fixed int, or [lo, hi] drawn uniformly per driver
    omega: list
    groups: list
    n_features: int
    target: str = "harsh_braking"
    exposure_log_mean: float = DEFAULT_EXPOSURE_LOG_MEAN
    exposure_log_sd: float = DEFAULT_EXPOSURE_LOG_SD
    seed: int = 0

    def __post_init__(self):
        self.groups = [g if isinstance(g, GroupTruth) else GroupTruth.from_dict(g) for g in self.groups]
        if len(self.omega) != len(self.groups):
            raise DataError("omega and groups must have the same length")
        total = float(sum(self.omega))
        if not np.isclose(total, 1.0, atol=1e-8):
            raise DataError(f"omega must sum to 1, got {total}")
        if self.target not in TARGET_CHOICES:
            raise DataError(f"unknown target {self.target!r}")
        for g in self.groups:
            if len(g.mean_coefficients) != self.n_features:
                raise DataError("mean_coefficients must have n_features entries")
            if g.inflation_coefficients is not None and len(g.inflation_coefficients) != self.n_features:
                raise DataError("inflation_coefficients must have n_features entries")

    def to_dict(self):
        d = asdict(self)
        d["groups"] = [g.to_dict() for g in self.groups]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["groups"] = [GroupTruth.from_dict(g) for g in d["groups"]]
        return cls(**d)


def feature_names(n_features):
    return tuple(f"x{j + 1}" for j in range(n_features))


def sample_gp(rng, m, theta, size=1):
    """Generalized-Poisson draws by inversion of the cumulative pmf.

    For negative theta the support is finite and unrenormalized; more than
    1e-3 of missing mass raises SupportExhausted, less is tolerated by
    returning the largest supported count for overshooting uniforms.
    """
    m = float(m)
    theta = float(theta)
    if theta < 0:
        k_max = int(np.ceil(-m / theta)) - 1
        if k_max < 0:
            raise SupportExhausted(f"no supported counts for m={m}, theta={theta}")
    else:
        k_max = int(np.ceil(m / (1.0 - theta) * 10.0 + 50.0))
    k = np.arange(k_max + 1)
    cum = np.cumsum(np.exp(gp_logpmf(k, m, theta)))
    if theta >= 0:
        # the adaptive cap leaves negligible tail mass, but extend if needed
        tries = 0
        while 1.0 - cum[-1] > 1e-9 and tries < 6:
            k_max *= 2
            k = np.arange(k_max + 1)
            cum = np.cumsum(np.exp(gp_logpmf(k, m, theta)))
            tries += 1
    elif 1.0 - cum[-1] > 1e-3:
        raise SupportExhausted(
            f"truncated pmf keeps only {cum[-1]:.6f} of the mass at m={m}, theta={theta}"
        )
    u = rng.random(size)
    idx = np.searchsorted(cum, u, side="left")
    return np.minimum(idx, k_max).astype(np.int64)


def generate(config):
    """Draw a synthetic table and its ground-truth driver labels.

    Returns (table, labels) where labels maps driver id to the 0-based true
    group index.  All randomness flows from config.seed.
    """
    rng = np.random.default_rng(config.seed)
    G = len(config.groups)
    n_drivers = config.n_drivers

    labels = rng.choice(G, size=n_drivers, p=np.asarray(config.omega, dtype=float))
    if np.isscalar(config.weeks) or isinstance(config.weeks, int):
        weeks_per = np.full(n_drivers, int(config.weeks))
    else:
        lo, hi = config.weeks
        weeks_per = rng.integers(int(lo), int(hi) + 1, size=n_drivers)
    if np.any(weeks_per < 1):
        raise DataError("every driver needs at least one week")

    driver_ids = np.array([f"d{i:05d}" for i in range(n_drivers)], dtype=object)
    row_driver = np.repeat(driver_ids, weeks_per)
    row_week = np.concatenate([np.arange(w) for w in weeks_per])
    row_label = np.repeat(labels, weeks_per)
    n = len(row_driver)

    X = rng.standard_normal((n, config.n_features))
    E = rng.lognormal(config.exposure_log_mean, config.exposure_log_sd, size=n)

    y = np.zeros(n, dtype=np.int64)
    for g, spec in enumerate(config.groups):
        mask = row_label == g
        if not np.any(mask):
            continue
        eta = spec.mean_intercept + X[mask] @ np.asarray(spec.mean_coefficients, dtype=float)
        m = E[mask] * np.exp(eta)
        if spec.family == "poisson" or spec.inflation_intercept is None:
            structural = np.zeros(mask.sum(), dtype=bool)
        else:
            psi = spec.inflation_intercept
            if spec.inflation_coefficients is not None:
                psi = psi + X[mask] @ np.asarray(spec.inflation_coefficients, dtype=float)
            structural = rng.random(mask.sum()) < expit(psi)
        draws = np.zeros(mask.sum(), dtype=np.int64)
        active = ~structural
        if np.any(active):
            if spec.family == "zigp" and spec.theta != 0.0:
                m_act = m[active]
                vals = np.empty(int(active.sum()), dtype=np.int64)
                for i, mi in enumerate(m_act):
                    vals[i] = sample_gp(rng, mi, spec.theta, size=1)[0]
                draws[active] = vals
            else:
                draws[active] = rng.poisson(m[active])
        y[mask] = draws

    counts = np.zeros((n, len(EVENT_NAMES)), dtype=np.int64)
    col = 0 if config.target == NME_TOTAL else EVENT_NAMES.index(config.target)
    counts[:, col] = y

    table = ObservationTable(
        driver_ids=row_driver,
        weeks=row_week,
        exposure=E,
        counts=counts,
        covariates=X,
        feature_names=feature_names(config.n_features),
    )
    return table, {str(d): int(g) for d, g in zip(driver_ids, labels)}


def pmf_bruteforce_check(family, params, k_max):
    """Direct pmf table over k = 0..k_max with its total mass and mean.

    ``params`` is a dict with the family's keys: mu for poisson, (m, theta)
    for gp, (pi, mu) for zip, (pi, m, theta) for zigp.
    """
    k = np.arange(int(k_max) + 1)
    if family == "poisson":
        logp = poisson_logpmf(k, params["mu"])
    elif family == "gp":
        logp = gp_logpmf(k, params["m"], params["theta"])
    elif family == "zip":
        logp = zip_logpmf(k, params["pi"], params["mu"])
    elif family == "zigp":
        logp = zigp_logpmf(k, params["pi"], params["m"], params["theta"])
    else:
        raise DataError(f"unknown family {family!r}")
    pmf = np.exp(logp)
    return {
        "family": family,
        "k_max": int(k_max),
        "pmf": pmf,
        "total_mass": float(pmf.sum()),
        "mean": float(np.dot(k, pmf)),
    }


def _destandardized(component, stats, truth_names):
    """Component parameters mapped back to the generator's covariate scale.

    Features dropped by the selection cap contribute zero coefficients.
    """
    pos_of = {name: i for i, name in enumerate(stats.names)}
    beta_std = component.mean.coefficients
    alpha = component.mean.intercept
    beta = np.zeros(len(truth_names))
    for j, name in enumerate(truth_names):
        i = pos_of.get(name)
        if i is not None:
            beta[j] = beta_std[i] / stats.std[i]
            alpha -= beta_std[i] * stats.mean[i] / stats.std[i]

    out = {"mean_intercept": float(alpha), "mean_coefficients": beta}
    if component.inflation is not None:
        g0 = component.inflation.intercept
        gamma = np.zeros(len(truth_names))
        if component.inflation.coefficients is not None:
            for j, name in enumerate(truth_names):
                i = pos_of.get(name)
                if i is not None:
                    gamma[j] = component.inflation.coefficients[i] / stats.std[i]
                    g0 -= component.inflation.coefficients[i] * stats.mean[i] / stats.std[i]
        out["inflation_intercept"] = float(g0)
        out["inflation_coefficients"] = gamma
    if component.dispersion is not None:
        out["theta"] = float(component.dispersion.theta)
    return out


def recovery_report(truth, fitted, true_labels=None):
    """Compare a fitted model against the generating truth.

    ``fitted`` is a pipeline FittedModel; groups are matched to the truth by
    the label permutation minimizing total absolute parameter error.  When
    ``true_labels`` (driver id -> group) is given, the report includes the
    share of drivers whose posterior-mode group agrees with the truth under
    that permutation.  Raises GMismatch when the group counts differ.
    """
    model = fitted.model
    if hasattr(model, "omega"):
        omega_hat = np.asarray(model.omega, dtype=float)
        components = list(model.components)
    else:
        omega_hat = np.ones(1)
        components = [model]
    G = len(truth.groups)
    if len(components) != G:
        raise GMismatch(G, len(components))

    names = feature_names(truth.n_features)
    fitted_groups = [_destandardized(c, fitted.stats, names) for c in components]

    def group_cost(g_true, g_fit):
        t = truth.groups[g_true]
        f = fitted_groups[g_fit]
        cost = abs(float(truth.omega[g_true]) - omega_hat[g_fit])
        cost += abs(t.mean_intercept - f["mean_intercept"])
        cost += float(
            np.abs(np.asarray(t.mean_coefficients, dtype=float) - f["mean_coefficients"]).sum()
        )
        if t.inflation_intercept is not None and "inflation_intercept" in f:
            cost += abs(t.inflation_intercept - f["inflation_intercept"])
        return cost

    best_perm, best_cost = None, np.inf
    for perm in itertools.permutations(range(G)):
        cost = sum(group_cost(g, perm[g]) for g in range(G))
        if cost < best_cost:
            best_perm, best_cost = perm, cost

    omega_err, alpha_err, beta_err, gamma0_err, theta_err = 0.0, 0.0, 0.0, None, None
    per_group = []
    for g in range(G):
        t = truth.groups[g]
        f = fitted_groups[best_perm[g]]
        entry = {
            "true_group": g,
            "fitted_group": int(best_perm[g]),
            "omega_error": abs(float(truth.omega[g]) - float(omega_hat[best_perm[g]])),
            "mean_intercept_error": abs(t.mean_intercept - f["mean_intercept"]),
            "coefficient_errors": np.abs(
                np.asarray(t.mean_coefficients, dtype=float) - f["mean_coefficients"]
            ).tolist(),
        }
        omega_err = max(omega_err, entry["omega_error"])
        alpha_err = max(alpha_err, entry["mean_intercept_error"])
        if entry["coefficient_errors"]:
            beta_err = max(beta_err, max(entry["coefficient_errors"]))
        if t.inflation_intercept is not None and "inflation_intercept" in f:
            entry["inflation_intercept_error"] = abs(
                t.inflation_intercept - f["inflation_intercept"]
            )
            gamma0_err = (
                entry["inflation_intercept_error"]
                if gamma0_err is None
                else max(gamma0_err, entry["inflation_intercept_error"])
            )
        if t.family == "zigp" and "theta" in f:
            entry["theta_error"] = abs(t.theta - f["theta"])
            theta_err = entry["theta_error"] if theta_err is None else max(theta_err, entry["theta_error"])
        per_group.append(entry)

    agreement = None
    if true_labels is not None and hasattr(model, "responsibilities") and len(model.driver_ids):
        mode = np.argmax(model.responsibilities, axis=1)
        hits = 0
        known = 0
        for i, d in enumerate(model.driver_ids):
            if d in true_labels:
                known += 1
                if int(mode[i]) == best_perm[true_labels[d]]:
                    hits += 1
        agreement = hits / known if known else None

    return {
        "permutation": list(best_perm),
        "total_cost": float(best_cost),
        "omega_error": float(omega_err),
        "mean_intercept_error": float(alpha_err),
        "coefficient_error": float(beta_err),
        "inflation_intercept_error": gamma0_err,
        "theta_error": theta_err,
        "agreement": agreement,
        "groups": per_group,
    }
