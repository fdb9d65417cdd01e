"""Single-component count regression models and their maximum-likelihood fits.

A component couples a log-linear mean model with an exposure offset,

    mu = exposure * exp(alpha0 + x . beta),

optionally a logistic structural-zero model pi = sigmoid(gamma0 + x . gamma)
(intercept-only by default), and for the generalized-Poisson family a
dispersion theta reparameterized as theta = tanh(raw) so the optimizer works
on an unconstrained vector.  Fitting maximizes the weighted log-likelihood
with analytic gradients under L-BFGS-B; per-row weights let the EM driver
reuse the same code path for soft group assignments.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln, log_expit

from .errors import DomainError, NonConvergenceWarning, SeparationWarning, UnsupportedFamily
from .pmf import gp_logpmf, poisson_logpmf, zigp_logpmf, zip_logpmf

logger = logging.getLogger(__name__)

FAMILIES = ("poisson", "zip", "zigp")

# Linear predictors are clamped before exponentiation; exp(30) ~ 1e13 already
# dwarfs any weekly exposure seen in practice.
ETA_CLAMP = 30.0

# Below this value of m + theta*k the log is continued linearly so that a
# fixed negative theta yields a finite, steeply penalized objective instead
# of -inf; the huge slope pushes the optimizer back inside the support.
SUPPORT_EPS = 1e-10


@dataclass
class MeanModel:
    intercept: float
    coefficients: np.ndarray

    def __post_init__(self):
        self.intercept = float(self.intercept)
        self.coefficients = np.asarray(self.coefficients, dtype=float).reshape(-1)


@dataclass
class InflationModel:
    intercept: float
    coefficients: np.ndarray | None = None  # None means intercept-only

    def __post_init__(self):
        self.intercept = float(self.intercept)
        if self.coefficients is not None:
            self.coefficients = np.asarray(self.coefficients, dtype=float).reshape(-1)


@dataclass
class Dispersion:
    theta: float
    mode: str = "free"  # "free" or "fixed"

    def __post_init__(self):
        self.theta = float(self.theta)
        if not -1.0 < self.theta < 1.0:
            raise DomainError(f"theta must lie in (-1, 1), got {self.theta}")
        if self.mode not in ("free", "fixed"):
            raise DomainError(f"dispersion mode must be 'free' or 'fixed', got {self.mode!r}")

    @property
    def raw(self):
        return float(np.arctanh(self.theta))


@dataclass
class ComponentParams:
    family: str
    mean: MeanModel
    inflation: InflationModel | None = None
    dispersion: Dispersion | None = None
    loglik: float = float("nan")
    n_params: int = 0
    converged: bool = True
    n_iter: int = 0
    feature_names: tuple | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamily(self.family)
        if self.family in ("zip", "zigp") and self.inflation is None:
            raise DomainError(f"{self.family} requires an inflation model")
        if self.family == "zigp" and self.dispersion is None:
            raise DomainError("zigp requires a dispersion")
        if self.feature_names is not None:
            self.feature_names = tuple(self.feature_names)
            if len(self.feature_names) != len(self.mean.coefficients):
                raise DomainError("feature_names must align with mean coefficients")

    def to_dict(self):
        d = {
            "family": self.family,
            "mean": {
                "intercept": self.mean.intercept,
                "coefficients": self.mean.coefficients.tolist(),
            },
            "inflation": None,
            "dispersion": None,
            "loglik": float(self.loglik),
            "n_params": int(self.n_params),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "diagnostics": self.diagnostics,
        }
        if self.inflation is not None:
            d["inflation"] = {
                "intercept": self.inflation.intercept,
                "coefficients": None
                if self.inflation.coefficients is None
                else self.inflation.coefficients.tolist(),
            }
        if self.dispersion is not None:
            d["dispersion"] = {"theta": self.dispersion.theta, "mode": self.dispersion.mode}
        return d

    @classmethod
    def from_dict(cls, d):
        inflation = None
        if d.get("inflation") is not None:
            inflation = InflationModel(
                intercept=d["inflation"]["intercept"],
                coefficients=d["inflation"]["coefficients"],
            )
        dispersion = None
        if d.get("dispersion") is not None:
            dispersion = Dispersion(theta=d["dispersion"]["theta"], mode=d["dispersion"]["mode"])
        return cls(
            family=d["family"],
            mean=MeanModel(d["mean"]["intercept"], d["mean"]["coefficients"]),
            inflation=inflation,
            dispersion=dispersion,
            loglik=d.get("loglik", float("nan")),
            n_params=d.get("n_params", 0),
            converged=d.get("converged", True),
            n_iter=d.get("n_iter", 0),
            feature_names=tuple(d["feature_names"]) if d.get("feature_names") else None,
            diagnostics=d.get("diagnostics", {}),
        )


def linear_mean(mean_model, x, exposure):
    """Exposure-scaled log-linear mean, exposure * exp(alpha0 + x . beta).

    The linear predictor is clamped to |eta| <= 30 before exponentiation.
    Accepts a single covariate row or a matrix of rows.
    """
    x = np.asarray(x, dtype=float)
    exposure = np.asarray(exposure, dtype=float)
    if np.any(exposure <= 0):
        raise DomainError("exposure must be positive")
    eta = mean_model.intercept + x @ mean_model.coefficients
    n_clamped = int(np.count_nonzero(np.abs(eta) > ETA_CLAMP))
    if n_clamped:
        logger.debug("clamped %d linear predictors to |eta| <= %.0f", n_clamped, ETA_CLAMP)
    mu = exposure * np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
    return float(mu) if np.ndim(mu) == 0 else mu


def _inflation_pi(inflation, x):
    psi = inflation.intercept
    if inflation.coefficients is not None:
        psi = psi + np.asarray(x, dtype=float) @ inflation.coefficients
    return expit(psi)


def zero_prob(params, x, exposure):
    """Probability of observing a zero count for given covariates/exposure."""
    m = linear_mean(params.mean, x, exposure)
    if params.family == "poisson":
        out = np.exp(-np.asarray(m, dtype=float))
    else:
        pi = _inflation_pi(params.inflation, x)
        out = pi + (1.0 - pi) * np.exp(-np.asarray(m, dtype=float))
    return float(out) if np.ndim(m) == 0 else out


def predicted_mean(params, x, exposure):
    """Expected count under the component: mu, (1-pi)mu, or (1-pi)m/(1-theta)."""
    m = linear_mean(params.mean, x, exposure)
    if params.family == "poisson":
        out = np.asarray(m, dtype=float)
    else:
        pi = _inflation_pi(params.inflation, x)
        base = np.asarray(m, dtype=float)
        if params.family == "zigp":
            base = base / (1.0 - params.dispersion.theta)
        out = (1.0 - pi) * base
    return float(out) if np.ndim(m) == 0 else out


def component_logpmf(params, y, x, exposure):
    """Per-observation log-pmf of counts ``y`` under the component."""
    m = linear_mean(params.mean, x, exposure)
    if params.family == "poisson":
        return poisson_logpmf(y, m)
    pi = _inflation_pi(params.inflation, x)
    if params.family == "zip":
        return zip_logpmf(y, pi, m)
    return zigp_logpmf(y, pi, m, params.dispersion.theta)


def component_loglik(params, table, target, weights=None):
    """Weighted log-likelihood of fixed parameters on a table.

    Evaluated through the same code path the fitter optimizes, so the value
    stored on a fit is reproduced exactly when re-evaluated on its training
    data.
    """
    inflation = "intercept"
    if params.inflation is not None and params.inflation.coefficients is not None:
        inflation = "full"
    dispersion = "free"
    if params.dispersion is not None and params.dispersion.mode == "fixed":
        dispersion = params.dispersion.theta
    fun, layout, _ = make_objective(
        table, target, params.family, weights, inflation, dispersion
    )
    vec = _vector_from_params(params, layout, params.family, "raw" in layout)
    return -fun(vec)[0]


def _log_ext(s):
    """log(s) with a linear continuation below SUPPORT_EPS; returns value and
    derivative so the penalized objective stays differentiable."""
    below = s <= SUPPORT_EPS
    safe = np.maximum(s, SUPPORT_EPS)
    val = np.where(below, np.log(SUPPORT_EPS) + (s - SUPPORT_EPS) / SUPPORT_EPS, np.log(safe))
    deriv = np.where(below, 1.0 / SUPPORT_EPS, 1.0 / safe)
    return val, deriv


class _Design:
    """Pre-sliced arrays for one weighted fit; zero-weight rows are excluded
    so they can never poison the objective with 0 * inf."""

    def __init__(self, table, target, weights):
        y = table.target_values(target).astype(float)
        n = table.n_rows
        if weights is None:
            w = np.ones(n)
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
            if len(w) != n:
                raise ValueError(f"weights length {len(w)} != {n} rows")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and non-negative")
        active = w > 0
        if not np.any(active):
            raise ValueError("all weights are zero")
        self.y = y[active]
        self.X = table.covariates[active]
        self.E = table.exposure[active]
        self.w = w[active]
        self.k = self.X.shape[1]
        self.logE = np.log(self.E)
        self.lnfact = gammaln(self.y + 1)  # computed once; y is fixed per fit
        self.zero = self.y == 0
        self.pos = ~self.zero
        self.w_sum = float(self.w.sum())


def _layout(family, k, use_gamma, free_theta):
    """Slice layout of the packed parameter vector."""
    idx = {"a0": 0, "beta": slice(1, 1 + k)}
    pos = 1 + k
    if family in ("zip", "zigp"):
        idx["g0"] = pos
        pos += 1
        if use_gamma:
            idx["gamma"] = slice(pos, pos + k)
            pos += k
    if family == "zigp" and free_theta:
        idx["raw"] = pos
        pos += 1
    idx["size"] = pos
    return idx


def _eta_mu(vec, layout, d):
    eta_raw = vec[layout["a0"]] + d.X @ vec[layout["beta"]]
    mask = np.abs(eta_raw) <= ETA_CLAMP
    eta = np.clip(eta_raw, -ETA_CLAMP, ETA_CLAMP)
    mu = d.E * np.exp(eta)
    return mu, mask


def _psi_pi(vec, layout, d):
    psi = np.full(len(d.y), vec[layout["g0"]])
    if "gamma" in layout:
        psi = psi + d.X @ vec[layout["gamma"]]
    return psi


def _negll_poisson(vec, layout, d):
    mu, mask = _eta_mu(vec, layout, d)
    ll = d.y * np.log(mu) - mu - d.lnfact
    deta = (d.y - mu) * mask * d.w
    grad = np.zeros(layout["size"])
    grad[layout["a0"]] = deta.sum()
    grad[layout["beta"]] = d.X.T @ deta
    return -float(np.dot(d.w, ll)), -grad


def _negll_zip(vec, layout, d):
    mu, mask = _eta_mu(vec, layout, d)
    psi = _psi_pi(vec, layout, d)
    log_pi = log_expit(psi)
    log_1mpi = log_expit(-psi)
    pi = expit(psi)

    z, p = d.zero, d.pos
    ll = np.empty(len(d.y))
    ll[z] = np.logaddexp(log_pi[z], log_1mpi[z] - mu[z])
    ll[p] = log_1mpi[p] + d.y[p] * np.log(mu[p]) - mu[p] - d.lnfact[p]

    deta = np.empty(len(d.y))
    dpsi = np.empty(len(d.y))
    r = np.exp(log_1mpi[z] - mu[z] - ll[z])
    s = np.exp(log_pi[z] + log_1mpi[z] - ll[z])
    deta[z] = -r * mu[z]
    dpsi[z] = -s * np.expm1(-mu[z])
    deta[p] = d.y[p] - mu[p]
    dpsi[p] = -pi[p]

    deta *= mask * d.w
    dpsi *= d.w
    grad = np.zeros(layout["size"])
    grad[layout["a0"]] = deta.sum()
    grad[layout["beta"]] = d.X.T @ deta
    grad[layout["g0"]] = dpsi.sum()
    if "gamma" in layout:
        grad[layout["gamma"]] = d.X.T @ dpsi
    return -float(np.dot(d.w, ll)), -grad


def _negll_zigp(vec, layout, d, fixed_theta=None):
    mu, mask = _eta_mu(vec, layout, d)
    psi = _psi_pi(vec, layout, d)
    log_pi = log_expit(psi)
    log_1mpi = log_expit(-psi)
    pi = expit(psi)
    if fixed_theta is None:
        raw = vec[layout["raw"]]
        theta = np.tanh(raw)
    else:
        theta = fixed_theta

    z, p = d.zero, d.pos
    yp = d.y[p]
    s_lin = mu[p] + theta * yp
    ln_s, inv_s = _log_ext(s_lin)

    ll = np.empty(len(d.y))
    ll[z] = np.logaddexp(log_pi[z], log_1mpi[z] - mu[z])
    ll[p] = log_1mpi[p] + np.log(mu[p]) + (yp - 1) * ln_s - mu[p] - theta * yp - d.lnfact[p]

    deta = np.empty(len(d.y))
    dpsi = np.empty(len(d.y))
    r = np.exp(log_1mpi[z] - mu[z] - ll[z])
    s0 = np.exp(log_pi[z] + log_1mpi[z] - ll[z])
    deta[z] = -r * mu[z]
    dpsi[z] = -s0 * np.expm1(-mu[z])
    deta[p] = 1.0 + mu[p] * (yp - 1) * inv_s - mu[p]
    dpsi[p] = -pi[p]

    deta *= mask * d.w
    dpsi *= d.w
    grad = np.zeros(layout["size"])
    grad[layout["a0"]] = deta.sum()
    grad[layout["beta"]] = d.X.T @ deta
    grad[layout["g0"]] = dpsi.sum()
    if "gamma" in layout:
        grad[layout["gamma"]] = d.X.T @ dpsi
    if fixed_theta is None:
        dtheta = float(np.dot(d.w[p], (yp - 1) * yp * inv_s - yp))
        grad[layout["raw"]] = dtheta * (1.0 - theta**2)
    return -float(np.dot(d.w, ll)), -grad


def make_objective(table, target, family, weights=None, inflation="intercept", dispersion="free"):
    """Return (negloglik_and_grad, layout, design) for the requested family.

    Exposed separately from fit_component so gradient checks and the EM
    driver can evaluate the exact objective the optimizer sees.
    """
    if family not in FAMILIES:
        raise UnsupportedFamily(family)
    d = _Design(table, target, weights)
    use_gamma = family != "poisson" and inflation == "full"
    fixed_theta = None
    free_theta = False
    if family == "zigp":
        if dispersion == "free":
            free_theta = True
        else:
            fixed_theta = float(dispersion)
            if not -1.0 < fixed_theta < 1.0:
                raise DomainError(f"fixed theta must lie in (-1, 1), got {fixed_theta}")
    layout = _layout(family, d.k, use_gamma, free_theta)

    if family == "poisson":
        fun = lambda v: _negll_poisson(v, layout, d)
    elif family == "zip" or (family == "zigp" and fixed_theta == 0.0):
        # theta = 0 reduces the generalized Poisson to the Poisson exactly,
        # so a fixed-zero dispersion shares the ZIP code path.
        fun = lambda v: _negll_zip(v, layout, d)
    elif free_theta:
        fun = lambda v: _negll_zigp(v, layout, d)
    else:
        fun = lambda v: _negll_zigp(v, layout, d, fixed_theta=fixed_theta)
    return fun, layout, d


def _initial_vector(layout, d, family, max_iter):
    """Default start: mean model from a Poisson fit on the non-zero rows,
    inflation intercept from the logit of the observed zero excess (clipped
    to [-4, 4]), raw dispersion at zero."""
    vec = np.zeros(layout["size"])
    total_y = float(np.dot(d.w, d.y))
    total_e = float(np.dot(d.w, d.E))
    base_rate = (total_y if total_y > 0 else 0.5) / total_e
    vec[layout["a0"]] = np.log(base_rate)
    if family == "poisson":
        return vec

    if np.any(d.pos):
        sub_layout = {"a0": 0, "beta": slice(1, 1 + d.k), "size": 1 + d.k}
        sub = _SubsetDesign(d, d.pos)
        x0 = np.zeros(1 + d.k)
        x0[0] = np.log(float(np.dot(sub.w, sub.y)) / float(np.dot(sub.w, sub.E)))
        res = minimize(
            lambda v: _negll_poisson(v, sub_layout, sub),
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": min(max_iter, 200), "ftol": 1e-10},
        )
        vec[layout["a0"]] = res.x[0]
        vec[layout["beta"]] = res.x[1:]

    mu0, _ = _eta_mu(vec, layout, d)
    p0_obs = float(np.dot(d.w, d.zero)) / d.w_sum
    p0_fit = float(np.dot(d.w, np.exp(-mu0))) / d.w_sum
    excess = np.clip(p0_obs - p0_fit, 1e-4, 1 - 1e-4)
    vec[layout["g0"]] = float(np.clip(np.log(excess / (1 - excess)), -4.0, 4.0))
    return vec


class _SubsetDesign:
    def __init__(self, d, mask):
        self.y = d.y[mask]
        self.X = d.X[mask]
        self.E = d.E[mask]
        self.w = d.w[mask]
        self.k = d.k
        self.lnfact = d.lnfact[mask]
        self.zero = self.y == 0
        self.pos = ~self.zero
        self.w_sum = float(self.w.sum())


def _vector_from_params(params, layout, family, free_theta):
    vec = np.zeros(layout["size"])
    vec[layout["a0"]] = params.mean.intercept
    beta = params.mean.coefficients
    if len(beta) != layout["beta"].stop - layout["beta"].start:
        raise DomainError("warm start has mismatched coefficient length")
    vec[layout["beta"]] = beta
    if family != "poisson":
        vec[layout["g0"]] = params.inflation.intercept
        if "gamma" in layout:
            if params.inflation.coefficients is not None:
                vec[layout["gamma"]] = params.inflation.coefficients
    if free_theta and params.dispersion is not None:
        vec[layout["raw"]] = params.dispersion.raw
    return vec


def fit_component(
    table,
    target,
    family,
    weights=None,
    inflation="intercept",
    dispersion="free",
    max_iter=800,
    init=None,
):
    """Maximum-likelihood fit of one component on (optionally weighted) rows.

    ``dispersion`` is "free" or a fixed theta value and only applies to the
    zigp family.  ``init`` warm-starts from an existing ComponentParams.
    Non-convergence is flagged on the result (and warned), never raised.
    """
    fun, layout, d = make_objective(table, target, family, weights, inflation, dispersion)
    free_theta = "raw" in layout
    if init is not None:
        x0 = _vector_from_params(init, layout, family, free_theta)
    else:
        x0 = _initial_vector(layout, d, family, max_iter)

    trace = [-fun(x0)[0]]
    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=lambda xk: trace.append(-fun(xk)[0]),
        options={"maxiter": max_iter, "ftol": 1e-11, "gtol": 1e-07, "maxcor": 20, "maxls": 60},
    )

    vec = res.x
    converged = bool(res.status == 0)
    if not converged:
        warnings.warn(
            f"{family} fit stopped without convergence after {res.nit} iterations: "
            f"{res.message}",
            NonConvergenceWarning,
        )

    k = d.k
    mean = MeanModel(vec[layout["a0"]], vec[layout["beta"]])
    infl = None
    disp = None
    if family != "poisson":
        gamma = vec[layout["gamma"]] if "gamma" in layout else None
        infl = InflationModel(vec[layout["g0"]], gamma)
    if family == "zigp":
        theta = float(np.tanh(vec[layout["raw"]])) if free_theta else float(dispersion)
        disp = Dispersion(theta, "free" if free_theta else "fixed")

    coef_mag = float(np.max(np.abs(vec[layout["beta"]]))) if k else 0.0
    if "gamma" in layout and k:
        coef_mag = max(coef_mag, float(np.max(np.abs(vec[layout["gamma"]]))))
    if coef_mag > 20.0:
        warnings.warn(
            f"coefficient magnitude {coef_mag:.1f} exceeds 20 on standardized features; "
            "possible separation",
            SeparationWarning,
        )

    mu_fin, mask = _eta_mu(vec, layout, d)
    diagnostics = {
        "grad_norm": float(np.max(np.abs(res.jac))),
        "message": str(res.message),
        "loglik_trace": [float(v) for v in trace],
        "n_clamped": int(np.count_nonzero(~mask)),
        "n_active_rows": int(len(d.y)),
        "weight_sum": d.w_sum,
    }
    if family == "zigp" and disp.theta < 0:
        diagnostics["support_violations"] = int(
            np.count_nonzero(mu_fin[d.pos] + disp.theta * d.y[d.pos] <= 0)
        )

    return ComponentParams(
        family=family,
        mean=mean,
        inflation=infl,
        dispersion=disp,
        loglik=float(-res.fun),
        n_params=layout["size"],
        converged=converged,
        n_iter=int(res.nit),
        feature_names=table.feature_names,
        diagnostics=diagnostics,
    )
