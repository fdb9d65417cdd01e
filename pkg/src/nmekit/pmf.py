"""Log-pmf kernels for the count families used throughout the toolkit.

All four kernels broadcast over numpy arrays and return scalars for scalar
input.  Conventions:

* Poisson with mean ``mu``:  ln p(k) = k ln mu - mu - ln k!
* Generalized Poisson with location ``m`` and dispersion ``theta``:
      ln p(k) = ln m + (k-1) ln(m + theta k) - m - theta k - ln k!
  ``theta = 0`` recovers the Poisson exactly; for ``theta < 0`` any k with
  ``m + theta k <= 0`` has zero mass (the pmf is truncated there and is *not*
  renormalized, so the total mass can fall slightly below one).
* Zero-inflated variants mix a point mass at zero with weight ``pi`` into the
  base count model.  The structural-zero probability of the zero-inflated
  generalized Poisson is ``pi + (1 - pi) exp(-m)`` and does not involve
  ``theta``.
"""

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

__all__ = ["poisson_logpmf", "gp_logpmf", "zip_logpmf", "zigp_logpmf"]


def _check_counts(k):
    k = np.asarray(k, dtype=float)
    if k.size and (np.any(k < 0) or np.any(k != np.floor(k)) or not np.all(np.isfinite(k))):
        raise DomainError("counts must be non-negative integers")
    return k


def _check_positive(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.size and (np.any(arr <= 0) or not np.all(np.isfinite(arr))):
        raise DomainError(f"{name} must be finite and positive")
    return arr


def _check_unit_interval(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.size and (np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr))):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def _maybe_scalar(out, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


def poisson_logpmf(k, mu):
    """Poisson log-pmf with mean ``mu > 0`` at non-negative integer ``k``."""
    k = _check_counts(k)
    mu = _check_positive(mu, "mu")
    out = k * np.log(mu) - mu - gammaln(k + 1)
    return _maybe_scalar(out, k, mu)


def gp_logpmf(k, m, theta):
    """Generalized Poisson log-pmf.

    ``m > 0`` and ``theta`` in (-1, 1).  Outside the support (``m + theta k``
    non-positive, possible only for negative ``theta``) the mass is zero and
    -inf is returned.
    """
    k = _check_counts(k)
    m = _check_positive(m, "m")
    theta = np.asarray(theta, dtype=float)
    if theta.size and (np.any(np.abs(theta) >= 1) or not np.all(np.isfinite(theta))):
        raise DomainError("theta must lie strictly inside (-1, 1)")

    s = m + theta * k
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(m) + (k - 1) * np.log(s) - m - theta * k - gammaln(k + 1)
    out = np.where(s > 0, out, -np.inf)
    return _maybe_scalar(out, k, m, theta)


def zip_logpmf(k, pi, mu):
    """Zero-inflated Poisson log-pmf.

    ``pi`` in [0, 1] is the structural-zero weight.  ``pi = 0`` reduces to
    the plain Poisson; ``pi = 1`` puts all mass at zero.
    """
    k = _check_counts(k)
    pi = _check_unit_interval(pi, "pi")
    mu = _check_positive(mu, "mu")

    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_1mpi = np.log1p(-pi)
    zero_branch = np.logaddexp(log_pi, log_1mpi - mu)
    count_branch = log_1mpi + k * np.log(mu) - mu - gammaln(k + 1)
    out = np.where(k == 0, zero_branch, count_branch)
    return _maybe_scalar(out, k, pi, mu)


def zigp_logpmf(k, pi, m, theta):
    """Zero-inflated generalized Poisson log-pmf.

    The zero class has probability ``pi + (1 - pi) exp(-m)`` regardless of
    ``theta``; positive counts follow the generalized Poisson scaled by
    ``1 - pi``.
    """
    k = _check_counts(k)
    pi = _check_unit_interval(pi, "pi")

    with np.errstate(divide="ignore", invalid="ignore"):
        log_pi = np.log(pi)
        log_1mpi = np.log1p(-pi)
        zero_branch = np.logaddexp(log_pi, log_1mpi - np.asarray(m, dtype=float))
        count_branch = log_1mpi + gp_logpmf(k, m, theta)
    out = np.where(k == 0, zero_branch, count_branch)
    return _maybe_scalar(out, k, pi, m, theta)
