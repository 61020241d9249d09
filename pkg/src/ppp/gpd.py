"""Generalized Pareto tail probability, tail quantile and sampling.

Only the tail function ``G(x) = (1 + xi (x - mu) / sigma) ** (-1 / xi)`` and
its inverse are provided; densities and parameter fitting are not needed here.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError

# below this |xi| the exponential limit is used with a second-order correction,
# provided |xi * z| is also small enough for the truncated series to be exact
XI_SERIES_CUTOFF = 1e-6
_SERIES_ARG_CUTOFF = 1e-4


@dataclass(frozen=True)
class GpdParams:
    """Location ``mu``, scale ``sigma`` and tail shape ``xi``."""

    mu: float = 0.0
    sigma: float = 1.0
    xi: float = 0.0

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"GpdParams.{name} must be finite")
        if not self.sigma > 0:
            raise DomainError(f"GpdParams.sigma must be positive, got {self.sigma}")

    @property
    def upper_endpoint(self):
        return self.mu - self.sigma / self.xi if self.xi < 0 else math.inf


def _unwrap(value, scalar):
    return float(value) if scalar else value


def tail_prob(params, x):
    """Exceedance probability ``G(x)``; accepts scalars or arrays."""
    scalar = np.ndim(x) == 0
    z = (np.asarray(x, dtype=float) - params.mu) / params.sigma
    xi = params.xi
    if np.any(z < 0) or (xi < 0 and np.any(z > -1.0 / xi)):
        raise DomainError("x lies outside the support of the distribution")
    series = -z + xi * z**2 / 2 - xi**2 * z**3 / 3
    if xi == 0:
        log_g = series
    else:
        with np.errstate(divide="ignore"):
            exact = -np.log1p(xi * z) / xi
        use = (abs(xi) < XI_SERIES_CUTOFF) & (np.abs(xi * z) < _SERIES_ARG_CUTOFF)
        log_g = np.where(use, series, exact)
    return _unwrap(np.exp(log_g), scalar)


def tail_quantile(params, g):
    """Return ``x`` with ``tail_prob(params, x) == g`` for ``0 < g <= 1``."""
    scalar = np.ndim(g) == 0
    g = np.asarray(g, dtype=float)
    if np.any(~(g > 0)) or np.any(g > 1):
        raise DomainError("tail probability must lie in (0, 1]")
    t = -np.log(g)
    xi = params.xi
    series = t * (1 + xi * t / 2 + xi**2 * t**2 / 6)
    if xi == 0:
        z = series
    else:
        use = (abs(xi) < XI_SERIES_CUTOFF) & (np.abs(xi * t) < _SERIES_ARG_CUTOFF)
        z = np.where(use, series, np.expm1(xi * t) / xi)
    return _unwrap(params.mu + params.sigma * z, scalar)


def uniform_tail_draws(rng, n):
    """``n`` uniforms on ``(0, 1]``; zero is excluded so quantiles stay finite."""
    return 1.0 - rng.random(n)


def sample(params, rng, n):
    """Draw ``n`` i.i.d. values by inverse transform of uniform tail probabilities."""
    if n < 1:
        raise DomainError("sample size must be at least 1")
    return tail_quantile(params, uniform_tail_draws(rng, n))
