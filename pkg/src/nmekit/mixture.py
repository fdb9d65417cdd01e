"""Finite-mixture fitting over drivers via EM.

Each driver carries one latent group label for all of its weeks, so the
E-step works on driver-level log-likelihoods (the sum of that driver's row
log-pmfs under each group).  The M-step refits every component with the
driver's responsibility broadcast to its rows as a weight, and updates the
mixing weights to the responsibility means.  Convergence uses the relative
rule |l_t - l_{t-1}| <= eps * (1 + |l_t|) on the observed-data
log-likelihood, which EM never decreases.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .components import ComponentParams, component_logpmf, fit_component, predicted_mean, zero_prob
from .errors import (
    AllRestartsFailed,
    DataError,
    DegenerateGroupWarning,
    ImpossibleDriver,
    NonConvergenceWarning,
    UnknownDriver,
    UnsupportedFamily,
)

logger = logging.getLogger(__name__)


@dataclass
class EmConfig:
    n_groups: int
    family: str = "zip"  # component family: zip or zigp
    inflation: str = "intercept"
    dispersion: object = "free"  # "free" or a fixed theta value (zigp only)
    epsilon: float = 1e-4
    max_em_iters: int = 100
    mstep_max_iters: int = 200
    n_restarts: int = 3
    seed: int = 0
    degeneracy_floor: float = 1e-4  # a group with omega < floor/G is frozen

    def __post_init__(self):
        if self.n_groups < 1:
            raise DataError(f"n_groups must be >= 1, got {self.n_groups}")
        if self.family not in ("poisson", "zip", "zigp"):
            raise UnsupportedFamily(self.family)

    def to_dict(self):
        return {
            "n_groups": self.n_groups,
            "family": self.family,
            "inflation": self.inflation,
            "dispersion": self.dispersion,
            "epsilon": self.epsilon,
            "max_em_iters": self.max_em_iters,
            "mstep_max_iters": self.mstep_max_iters,
            "n_restarts": self.n_restarts,
            "seed": self.seed,
            "degeneracy_floor": self.degeneracy_floor,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class MixtureModel:
    config: EmConfig
    omega: np.ndarray
    components: list
    loglik: float
    n_params: int
    converged: bool
    n_iter: int
    trace: list
    driver_ids: tuple
    responsibilities: np.ndarray  # (n_drivers, G), rows align with driver_ids
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_groups(self):
        return len(self.omega)

    def responsibilities_for(self, driver_id):
        try:
            i = self.driver_ids.index(str(driver_id))
        except ValueError:
            raise UnknownDriver(driver_id) from None
        return self.responsibilities[i]

    def to_dict(self, include_responsibilities=True):
        d = {
            "config": self.config.to_dict(),
            "omega": [float(v) for v in self.omega],
            "components": [c.to_dict() for c in self.components],
            "loglik": float(self.loglik),
            "n_params": int(self.n_params),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "trace": [float(v) for v in self.trace],
            "diagnostics": self.diagnostics,
        }
        if include_responsibilities:
            d["driver_ids"] = list(self.driver_ids)
            d["responsibilities"] = self.responsibilities.tolist()
        else:
            d["driver_ids"] = []
            d["responsibilities"] = []
        return d

    @classmethod
    def from_dict(cls, d):
        resp = np.asarray(d.get("responsibilities", []), dtype=float)
        if resp.size == 0:
            resp = resp.reshape(0, len(d["omega"]))
        return cls(
            config=EmConfig.from_dict(d["config"]),
            omega=np.asarray(d["omega"], dtype=float),
            components=[ComponentParams.from_dict(c) for c in d["components"]],
            loglik=d["loglik"],
            n_params=d["n_params"],
            converged=d["converged"],
            n_iter=d["n_iter"],
            trace=list(d.get("trace", [])),
            driver_ids=tuple(d.get("driver_ids", [])),
            responsibilities=resp,
            diagnostics=d.get("diagnostics", {}),
        )


def driver_group_logliks(table, target, components):
    """Driver-by-group log-likelihood matrix.

    Returns (logL, driver_ids, codes) where logL[i, g] is the sum of row
    log-pmfs of driver i under component g, driver_ids is sorted, and codes
    maps each table row to its driver's index.
    """
    ids, codes = table.driver_index()
    y = table.target_values(target)
    logL = np.zeros((len(ids), len(components)))
    for g, comp in enumerate(components):
        rows = component_logpmf(comp, y, table.covariates, table.exposure)
        col = np.zeros(len(ids))
        np.add.at(col, codes, rows)
        logL[:, g] = col
    dead = ~np.isfinite(logL).any(axis=1) | np.isnan(logL).any(axis=1)
    if np.any(dead):
        raise ImpossibleDriver(str(ids[int(np.nonzero(dead)[0][0])]))
    return logL, ids, codes


def observed_loglik(logL, omega):
    """Observed-data log-likelihood sum_i log sum_g omega_g exp(logL[i, g])."""
    with np.errstate(divide="ignore"):
        scored = logL + np.log(np.asarray(omega, dtype=float))
    return float(logsumexp(scored, axis=1).sum())


def e_step(logL, omega):
    """Posterior group responsibilities, computed with max-subtraction."""
    with np.errstate(divide="ignore"):
        scored = logL + np.log(np.asarray(omega, dtype=float))
    top = scored.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise ImpossibleDriver(f"index {int(np.nonzero(~np.isfinite(top.ravel()))[0][0])}")
    w = np.exp(scored - top)
    tau = w / w.sum(axis=1, keepdims=True)
    return tau


def m_step(table, target, tau, codes, config, components):
    """One M-step: updated mixing weights and refit components.

    Groups whose weight falls below the degeneracy floor keep their previous
    parameters and are only flagged.  Row weights are the responsibilities of
    the row's driver.
    """
    omega = tau.mean(axis=0)
    floor = config.degeneracy_floor / config.n_groups
    new_components = []
    frozen = []
    for g in range(config.n_groups):
        if omega[g] < floor:
            warnings.warn(
                f"group {g} weight {omega[g]:.2e} below {floor:.2e}; frozen",
                DegenerateGroupWarning,
            )
            frozen.append(g)
            new_components.append(components[g])
            continue
        w_rows = tau[codes, g]
        with warnings.catch_warnings():
            # M-steps routinely stop on the iteration cap mid-EM; the final
            # model's convergence is judged on the EM trace instead.
            warnings.simplefilter("ignore", NonConvergenceWarning)
            new_components.append(
                fit_component(
                    table,
                    target,
                    config.family,
                    weights=w_rows,
                    inflation=config.inflation,
                    dispersion=config.dispersion,
                    max_iter=config.mstep_max_iters,
                    init=components[g],
                )
            )
    return omega, new_components, frozen


def initialize(table, target, config, restart=0):
    """Quantile-block starting point.

    Drivers are ranked by empirical rate (total count / total exposure) and
    cut into ``n_groups`` contiguous blocks; each block gets an unweighted
    component fit and the mixing weights start uniform.  Restarts beyond the
    first jitter the block boundaries with the seeded generator.
    """
    ids, codes = table.driver_index()
    if len(ids) < config.n_groups:
        raise DataError(f"{len(ids)} drivers cannot support {config.n_groups} groups")
    y = table.target_values(target).astype(float)
    num = np.zeros(len(ids))
    den = np.zeros(len(ids))
    np.add.at(num, codes, y)
    np.add.at(den, codes, table.exposure)
    order = np.argsort(num / den, kind="stable")

    G = config.n_groups
    fractions = np.arange(1, G) / G
    if restart > 0:
        rng = np.random.default_rng([config.seed, restart])
        fractions = fractions + rng.uniform(-0.4, 0.4, size=G - 1) / G
    cuts = np.round(fractions * len(ids)).astype(int)
    cuts = np.clip(cuts, np.arange(1, G), len(ids) - np.arange(G - 1, 0, -1))
    blocks = np.split(order, cuts)

    components = []
    for block in blocks:
        members = set(ids[block])
        w = np.array([1.0 if str(d) in members else 0.0 for d in table.driver_ids])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            components.append(
                fit_component(
                    table,
                    target,
                    config.family,
                    weights=w,
                    inflation=config.inflation,
                    dispersion=config.dispersion,
                    max_iter=config.mstep_max_iters,
                )
            )
    omega = np.full(G, 1.0 / G)
    return omega, components


def _run_em(table, target, config, omega, components):
    trace = []
    converged = False
    logL, ids, codes = driver_group_logliks(table, target, components)
    frozen = []
    for it in range(config.max_em_iters):
        ll = observed_loglik(logL, omega)
        trace.append(ll)
        if it > 0 and abs(ll - trace[-2]) <= config.epsilon * (1.0 + abs(ll)):
            converged = True
            break
        tau = e_step(logL, omega)
        omega, components, frozen_now = m_step(table, target, tau, codes, config, components)
        frozen = sorted(set(frozen) | set(frozen_now))
        logL, ids, codes = driver_group_logliks(table, target, components)
    else:
        trace.append(observed_loglik(logL, omega))

    tau = e_step(logL, omega)
    return {
        "omega": omega,
        "components": components,
        "loglik": trace[-1],
        "trace": trace,
        "converged": converged,
        "tau": tau,
        "ids": ids,
        "frozen": frozen,
    }


def fit_em(table, target, config, init=None):
    """Fit the mixture with restarts and keep the best observed loglik.

    ``init`` may supply an explicit (omega, components) starting point, in
    which case exactly one run is performed from it.  Groups of the returned
    model are ordered by descending weight (ties by ascending mean
    intercept), with responsibilities permuted to match.
    """
    runs = []
    failures = []
    n_starts = 1 if init is not None else config.n_restarts
    for r in range(n_starts):
        try:
            if init is not None:
                omega0, comps0 = init
            else:
                omega0, comps0 = initialize(table, target, config, restart=r)
            run = _run_em(table, target, config, np.asarray(omega0, float), list(comps0))
        except (ImpossibleDriver, FloatingPointError, ValueError) as exc:
            logger.warning("EM restart %d failed: %s", r, exc)
            failures.append(f"restart {r}: {exc}")
            continue
        if np.isfinite(run["loglik"]):
            run["restart"] = r
            runs.append(run)
        else:
            failures.append(f"restart {r}: non-finite loglik")
    if not runs:
        raise AllRestartsFailed("; ".join(failures) or "no restarts attempted")

    best = max(runs, key=lambda r: r["loglik"])
    if not best["converged"]:
        warnings.warn(
            f"EM stopped at the iteration cap ({config.max_em_iters}) without meeting "
            f"the relative tolerance {config.epsilon}",
            NonConvergenceWarning,
        )

    omega = best["omega"]
    intercepts = np.array([c.mean.intercept for c in best["components"]])
    order = np.lexsort((intercepts, -omega))
    omega = omega[order]
    components = [best["components"][g] for g in order]
    tau = best["tau"][:, order]

    n_params = int(sum(c.n_params for c in components) + (config.n_groups - 1))
    diagnostics = {
        "restarts": [
            {
                "restart": r["restart"],
                "loglik": float(r["loglik"]),
                "converged": bool(r["converged"]),
                "n_iter": len(r["trace"]) - 1,
            }
            for r in runs
        ],
        "failures": failures,
        "frozen_groups": [int(g) for g in best["frozen"]],
        "mstep_converged": [bool(c.converged) for c in components],
    }
    return MixtureModel(
        config=replace(config),
        omega=omega,
        components=components,
        loglik=float(best["loglik"]),
        n_params=n_params,
        converged=bool(best["converged"]),
        n_iter=len(best["trace"]) - 1,
        trace=[float(v) for v in best["trace"]],
        driver_ids=tuple(str(d) for d in best["ids"]),
        responsibilities=tau,
        diagnostics=diagnostics,
    )


def _row_weights(model, table, membership):
    """Per-row group weights: stored posteriors, prior omega, or auto."""
    G = model.n_groups
    n = table.n_rows
    if membership not in ("posterior", "prior", "auto"):
        raise ValueError(f"membership must be posterior, prior, or auto, got {membership!r}")
    if membership == "prior":
        return np.tile(model.omega, (n, 1))
    known = {d: i for i, d in enumerate(model.driver_ids)}
    out = np.empty((n, G))
    for r, d in enumerate(table.driver_ids):
        i = known.get(str(d))
        if i is None:
            if membership == "posterior":
                raise UnknownDriver(str(d))
            out[r] = model.omega
        else:
            out[r] = model.responsibilities[i]
    return out


def predict_mean(model, table, membership="auto"):
    """Expected count per row: group means mixed by membership weights.

    ``posterior`` uses stored responsibilities and refuses unseen drivers;
    ``prior`` uses the mixing weights for every row; ``auto`` (default) uses
    posteriors where available and the prior for unseen drivers.
    """
    w = _row_weights(model, table, membership)
    means = np.column_stack(
        [predicted_mean(c, table.covariates, table.exposure) for c in model.components]
    )
    return (w * means).sum(axis=1)


def mixture_zero_prob(model, table, membership="auto"):
    """Probability of a zero count per row under the mixture."""
    w = _row_weights(model, table, membership)
    zp = np.column_stack(
        [zero_prob(c, table.covariates, table.exposure) for c in model.components]
    )
    return (w * zp).sum(axis=1)


def mixture_loglik(model, table, target):
    """Observed-data log-likelihood of (possibly new) data under the fitted
    mixture, treating every driver's group as latent with prior omega."""
    logL, _, _ = driver_group_logliks(table, target, model.components)
    return observed_loglik(logL, model.omega)
