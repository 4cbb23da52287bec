"""Parametric AFT transition-time distributions.

Each supported family (weibull, loglogistic, lognormal, exponential) is an
accelerated failure time model: log V = location + scale * E where E follows
a fixed error distribution (extreme value, logistic or normal).  All
computations standardize to the error scale, so tail arithmetic happens on
log-time where it is numerically safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_ndtr, log1p, logit, ndtr, ndtri

__all__ = [
    "DomainError",
    "DegenerateIntervalError",
    "Family",
    "LinearPredictor",
    "get_family",
    "FAMILY_TAGS",
    "density",
    "log_density",
    "cdf",
    "survival",
    "quantile",
    "sample_truncated",
]

# Probability mass below which a truncation interval is treated as empty.
MASS_FLOOR = 1e-300


class DomainError(ValueError):
    """Raised when an argument is outside a distribution's domain."""


class DegenerateIntervalError(RuntimeError):
    """Raised when a truncation interval carries no usable probability mass.

    ``indices`` holds the offending observation indices (empty tuple when the
    call was not tied to observations).
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in np.atleast_1d(indices))


# ---------------------------------------------------------------------------
# Standardized error distributions (distribution of E in log V = mu + sigma*E)
# ---------------------------------------------------------------------------


class _ExtremeValueDist:
    """Standard (smallest) extreme value distribution: f(e) = exp(e - exp(e))."""

    median = np.log(np.log(2.0))

    @staticmethod
    def log_pdf(e):
        e = np.asarray(e, dtype=float)
        with np.errstate(over="ignore"):
            return e - np.exp(e)

    @staticmethod
    def cdf(e):
        e = np.asarray(e, dtype=float)
        with np.errstate(over="ignore"):
            return -np.expm1(-np.exp(e))

    @staticmethod
    def sf(e):
        e = np.asarray(e, dtype=float)
        with np.errstate(over="ignore"):
            return np.exp(-np.exp(e))

    @staticmethod
    def log_cdf(e):
        e = np.asarray(e, dtype=float)
        with np.errstate(over="ignore", divide="ignore"):
            # log(1 - exp(-exp(e))); for e << 0 this is e to first order
            out = np.where(e < -30.0, e, np.log(-np.expm1(-np.exp(np.minimum(e, 700.0)))))
        return out

    @staticmethod
    def log_sf(e):
        e = np.asarray(e, dtype=float)
        with np.errstate(over="ignore"):
            return -np.exp(e)

    @staticmethod
    def ppf(p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(-np.log1p(-p))

    @staticmethod
    def isf(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(-np.log(s))


class _LogisticDist:
    """Standard logistic error distribution."""

    median = 0.0

    @staticmethod
    def log_pdf(e):
        e = np.asarray(e, dtype=float)
        # log f = e - 2*log(1+exp(e)), evaluated stably from -|e|
        return -np.abs(e) - 2.0 * log1p(np.exp(-np.abs(e)))

    @staticmethod
    def cdf(e):
        return expit(np.asarray(e, dtype=float))

    @staticmethod
    def sf(e):
        return expit(-np.asarray(e, dtype=float))

    @staticmethod
    def log_cdf(e):
        return log_expit(np.asarray(e, dtype=float))

    @staticmethod
    def log_sf(e):
        return log_expit(-np.asarray(e, dtype=float))

    @staticmethod
    def ppf(p):
        return logit(np.asarray(p, dtype=float))

    @staticmethod
    def isf(s):
        return -logit(np.asarray(s, dtype=float))


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class _NormalDist:
    """Standard normal error distribution."""

    median = 0.0

    @staticmethod
    def log_pdf(e):
        e = np.asarray(e, dtype=float)
        return -0.5 * e * e - _LOG_SQRT_2PI

    @staticmethod
    def cdf(e):
        return ndtr(np.asarray(e, dtype=float))

    @staticmethod
    def sf(e):
        return ndtr(-np.asarray(e, dtype=float))

    @staticmethod
    def log_cdf(e):
        return log_ndtr(np.asarray(e, dtype=float))

    @staticmethod
    def log_sf(e):
        return log_ndtr(-np.asarray(e, dtype=float))

    @staticmethod
    def ppf(p):
        return ndtri(np.asarray(p, dtype=float))

    @staticmethod
    def isf(s):
        return -ndtri(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class Family:
    """One of the four supported transition-time families.

    ``fixed_scale`` marks the exponential family, which is the Weibull family
    with the scale pinned to 1.
    """

    tag: str
    error: object
    fixed_scale: bool = False

    def __repr__(self):
        return f"Family({self.tag!r})"


_FAMILIES = {
    "weibull": Family("weibull", _ExtremeValueDist()),
    "loglogistic": Family("loglogistic", _LogisticDist()),
    "lognormal": Family("lognormal", _NormalDist()),
    "exponential": Family("exponential", _ExtremeValueDist(), fixed_scale=True),
}

FAMILY_TAGS = tuple(_FAMILIES)


def get_family(tag):
    """Look up a family by its lowercase string tag."""
    try:
        return _FAMILIES[tag.lower()]
    except (KeyError, AttributeError):
        raise DomainError(
            f"unknown family {tag!r}; expected one of {', '.join(_FAMILIES)}"
        ) from None


@dataclass(frozen=True)
class LinearPredictor:
    """Location (z'beta on the log-time scale) and scale (sigma) of one model."""

    location: float
    scale: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.location)) or not np.isfinite(self.scale):
            raise DomainError("linear predictor must be finite")
        if self.scale <= 0:
            raise DomainError(f"scale must be positive, got {self.scale}")


def _check_lp(family, lp):
    fam = get_family(family) if isinstance(family, str) else family
    if not isinstance(lp, LinearPredictor):
        lp = LinearPredictor(*lp)
    if fam.fixed_scale and lp.scale != 1.0:
        raise DomainError(f"{fam.tag} requires scale == 1, got {lp.scale}")
    return fam, lp


def _standardize(lp, v):
    """Map times to the error scale: e = (log v - location)/scale."""
    with np.errstate(divide="ignore"):
        return (np.log(v) - lp.location) / lp.scale


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def log_density(family, lp, v):
    """Log density of the transition time at v > 0."""
    fam, lp = _check_lp(family, lp)
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or np.any(~np.isfinite(v)):
        raise DomainError("density requires finite v > 0")
    e = _standardize(lp, v)
    return fam.error.log_pdf(e) - np.log(lp.scale) - np.log(v)


def density(family, lp, v):
    """Density of the transition time at v > 0 (change of variables from log-time)."""
    return np.exp(log_density(family, lp, v))


def cdf(family, lp, v):
    """Distribution function at v >= 0; cdf(0) = 0 and cdf(+inf) = 1."""
    fam, lp = _check_lp(family, lp)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise DomainError("cdf requires v >= 0")
    return fam.error.cdf(_standardize(lp, v))


def survival(family, lp, v):
    """Survival function 1 - cdf, computed without cancellation."""
    fam, lp = _check_lp(family, lp)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise DomainError("survival requires v >= 0")
    return fam.error.sf(_standardize(lp, v))


def quantile(family, lp, p):
    """Inverse of cdf for p in (0, 1); closed form for every family."""
    fam, lp = _check_lp(family, lp)
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1) or np.any(np.isnan(p)):
        raise DomainError("quantile requires p in (0, 1)")
    return np.exp(lp.location + lp.scale * fam.error.ppf(p))


def _truncated_eps(error, e_a, e_b, u):
    """Inverse-CDF draw of the standardized error restricted to (e_a, e_b).

    Evaluates on the survival side when the whole interval lies above the
    error median, avoiding cancellation in F(b) - F(a) deep in the right
    tail.  Returns (eps, mass).
    """
    upper = (e_a > error.median) & (e_b > error.median)
    if np.all(upper):
        s_a = error.sf(e_a)
        s_b = error.sf(e_b)
        mass = s_a - s_b
        eps = error.isf(s_a + u * (s_b - s_a))
        return eps, mass
    p_a = error.cdf(e_a)
    p_b = error.cdf(e_b)
    mass = p_b - p_a
    eps = error.ppf(p_a + u * (p_b - p_a))
    if np.any(upper):
        s_a = error.sf(np.where(upper, e_a, np.inf))
        s_b = error.sf(np.where(upper, e_b, np.inf))
        mass = np.where(upper, s_a - s_b, mass)
        eps = np.where(upper, error.isf(s_a + u * (s_b - s_a)), eps)
    return eps, mass


def sample_truncated(family, lp, a, b, u, indices=None, mass_floor=MASS_FLOOR):
    """Draw from the family restricted to (a, b) via the inverse-CDF map.

    Given u in (0, 1) the draw is quantile(cdf(a) + u*(cdf(b) - cdf(a))),
    which lies strictly inside (a, b).  b may be +inf.  An interval whose
    probability mass falls below ``mass_floor`` raises
    DegenerateIntervalError naming the offending observation(s) rather than
    clamping silently.
    """
    fam, lp = _check_lp(family, lp)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise DomainError("lower truncation bound must be >= 0")
    if np.any(b <= a):
        raise DomainError("truncation requires a < b")
    if np.any(u <= 0) or np.any(u >= 1):
        raise DomainError("u must lie in (0, 1)")
    with np.errstate(divide="ignore"):
        e_a = np.where(a > 0, (np.log(a) - lp.location) / lp.scale, -np.inf)
        e_b = np.where(np.isfinite(b), (np.log(b) - lp.location) / lp.scale, np.inf)
    eps, mass = _truncated_eps(fam.error, e_a, e_b, u)
    bad = mass < mass_floor
    if np.any(bad):
        where = np.nonzero(np.atleast_1d(bad))[0]
        if indices is not None:
            where = np.atleast_1d(indices)[where]
        raise DegenerateIntervalError(
            f"truncation interval carries no probability mass "
            f"(observation indices {list(where)})",
            indices=where,
        )
    out = np.exp(lp.location + lp.scale * eps)
    # The inverse-CDF map can land on a bound to rounding; keep draws interior.
    out = np.minimum(np.maximum(out, np.nextafter(a, np.inf)), np.nextafter(b, -np.inf))
    return out if out.ndim else float(out)
