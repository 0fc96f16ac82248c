"""Probability-integral transforms between data scale, N(0,1) and unit Frechet.

Rank transforms use Weibull plotting positions ``rank / (n + 1)`` with average
ranks for ties, so every probability stays strictly inside (0, 1).  The
parametric alternative splices a right-truncated gamma bulk onto a generalized
Pareto tail above a high quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .errors import DomainError, FitError

__all__ = [
    "EmpiricalMarginal",
    "BlendedMarginal",
    "empirical_cdf",
    "to_frechet",
    "frechet_cdf",
    "to_normal",
    "fit_blended",
    "blended_cdf",
    "rank_to_frechet",
    "rank_to_normal",
    "ResponseTransform",
]


@dataclass(frozen=True)
class EmpiricalMarginal:
    sorted_values: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        values = np.sort(np.asarray(self.sorted_values, dtype=float).ravel())
        if values.size < 2:
            raise DomainError("empirical marginal needs at least 2 observations")
        if not np.all(np.isfinite(values)):
            raise DomainError("empirical marginal built from non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "sorted_values", values)
        object.__setattr__(self, "n", int(values.size))

    @classmethod
    def from_data(cls, data) -> "EmpiricalMarginal":
        return cls(np.asarray(data, dtype=float))

    @property
    def is_degenerate(self) -> bool:
        return self.sorted_values[0] == self.sorted_values[-1]

    def cdf(self, x):
        return empirical_cdf(self, x)


def empirical_cdf(marginal: EmpiricalMarginal, x):
    """Average-rank plotting position of ``x`` within the stored sample.

    With ``a`` sample values strictly below ``x`` and ``c`` equal to it the
    rank is ``a + (c + 1) / 2``.  For sample points this is the usual average
    rank; points outside the sample land on ``0.5 / (n + 1)`` and
    ``(n + 0.5) / (n + 1)``, and points between two sample values sit halfway
    between their neighbours' ranks.
    """
    values = marginal.sorted_values
    x_arr = np.asarray(x, dtype=float)
    below = np.searchsorted(values, x_arr, side="left")
    at_or_below = np.searchsorted(values, x_arr, side="right")
    rank = below + (at_or_below - below + 1) / 2.0
    u = rank / (marginal.n + 1)
    if np.ndim(u) == 0:
        return float(u)
    return u


def _check_open_unit(u):
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0.0) & (u_arr < 1.0))):
        raise DomainError("probability must lie strictly inside (0, 1)")
    return u_arr


def to_frechet(u):
    """Unit Frechet quantile ``-1 / log(u)``."""
    u_arr = _check_open_unit(u)
    z = -1.0 / np.log(u_arr)
    return float(z) if np.ndim(z) == 0 else z


def frechet_cdf(z):
    z_arr = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(z_arr > 0, np.exp(-1.0 / np.where(z_arr > 0, z_arr, 1.0)), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def to_normal(u):
    """Standard normal quantile."""
    u_arr = _check_open_unit(u)
    z = special.ndtri(u_arr)
    return float(z) if np.ndim(z) == 0 else z


def rank_to_frechet(marginal: EmpiricalMarginal, x):
    return to_frechet(empirical_cdf(marginal, x))


def rank_to_normal(marginal: EmpiricalMarginal, x):
    return to_normal(empirical_cdf(marginal, x))


# -- blended gamma / GPD ------------------------------------------------------


@dataclass(frozen=True)
class BlendedMarginal:
    bulk_shape: float
    bulk_rate: float
    tail_scale: float
    tail_shape: float
    threshold_value: float
    threshold_q: float = 0.95

    def __post_init__(self):
        if not (self.bulk_shape > 0 and self.bulk_rate > 0):
            raise DomainError("gamma bulk parameters must be positive")
        if not self.tail_scale > 0:
            raise DomainError("GPD scale must be positive")
        if not 0.0 < self.threshold_q < 1.0:
            raise DomainError("threshold_q must lie in (0, 1)")

    def cdf(self, x):
        return blended_cdf(self, x)


def _gamma_newton_shape(log_mean_minus_mean_log: float, tol=1e-12, max_iter=100):
    """Solve ``log a - digamma(a) = s`` for the gamma shape ``a``."""
    s = log_mean_minus_mean_log
    if not s > 0:
        raise FitError("gamma bulk is degenerate (zero spread)")
    a = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    trace = [a]
    for _ in range(max_iter):
        f = np.log(a) - special.digamma(a) - s
        fprime = 1.0 / a - special.polygamma(1, a)
        step = f / fprime
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2.0
        trace.append(a_new)
        if abs(a_new - a) < tol * max(1.0, a):
            return a_new, trace
        a = a_new
    raise FitError("gamma shape Newton iteration did not converge", trace)


def _fit_truncated_gamma(x: np.ndarray, upper: float):
    """Gamma MLE for observations right-truncated at ``upper``.

    The untruncated profile-likelihood Newton solution is the starting point;
    the truncation correction ``-n log F(upper)`` is then included in a
    quasi-Newton refinement over log-parameters.
    """
    s = np.log(x.mean()) - np.mean(np.log(x))
    shape0, newton_trace = _gamma_newton_shape(s)
    rate0 = shape0 / x.mean()
    n = x.size
    sum_x = x.sum()
    sum_log = np.log(x).sum()

    def nll(params):
        a, b = np.exp(params)
        ll = n * (a * np.log(b) - special.gammaln(a)) + (a - 1) * sum_log - b * sum_x
        log_mass = np.log(special.gammainc(a, b * upper))
        return -(ll - n * log_mass) / n

    trace = []
    res = optimize.minimize(
        nll,
        np.log([shape0, rate0]),
        method="L-BFGS-B",
        callback=lambda xk: trace.append(np.exp(xk).tolist()),
    )
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitError(f"truncated gamma MLE failed: {res.message}", newton_trace + trace)
    shape, rate = np.exp(res.x)
    return float(shape), float(rate)


def _fit_gpd(excess: np.ndarray, min_shape=-0.5):
    """GPD MLE on threshold excesses with the shape kept above ``min_shape``."""
    n = excess.size
    mean = excess.mean()
    if not mean > 0:
        raise FitError("no positive threshold excesses for the GPD tail")

    def nll(params):
        log_scale, xi = params
        scale = np.exp(log_scale)
        z = excess / scale
        if abs(xi) < 1e-9:
            return log_scale + z.mean()
        arg = 1.0 + xi * z
        if np.any(arg <= 0):
            return np.inf
        return log_scale + (1.0 + 1.0 / xi) * np.mean(np.log1p(xi * z))

    trace = []
    x0 = np.array([np.log(mean), 0.05])
    res = optimize.minimize(
        nll,
        x0,
        method="L-BFGS-B",
        bounds=[(None, None), (min_shape + 1e-6, 5.0)],
        callback=lambda xk: trace.append([float(np.exp(xk[0])), float(xk[1])]),
    )
    if not res.success or not np.isfinite(res.fun):
        raise FitError(f"GPD MLE failed: {res.message}", trace)
    return float(np.exp(res.x[0])), float(res.x[1])


def fit_blended(data, threshold_q: float = 0.95) -> BlendedMarginal:
    """Fit a gamma bulk below the ``threshold_q`` quantile and a GPD above it."""
    x = np.asarray(data, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < 50:
        raise FitError("blended marginal needs at least 50 observations")
    if not 0.5 < threshold_q < 1.0:
        raise DomainError("threshold_q must lie in (0.5, 1)")
    if np.ptp(x) == 0:
        raise FitError("blended marginal data are constant (degenerate)")
    if np.any(x <= 0):
        raise FitError("gamma bulk requires strictly positive data")
    threshold = float(np.quantile(x, threshold_q))
    bulk = x[x <= threshold]
    excess = x[x > threshold] - threshold
    if bulk.size < 10 or excess.size < 10:
        raise FitError("too few observations on one side of the threshold")
    shape, rate = _fit_truncated_gamma(bulk, threshold)
    tail_scale, tail_shape = _fit_gpd(excess)
    return BlendedMarginal(
        bulk_shape=shape,
        bulk_rate=rate,
        tail_scale=tail_scale,
        tail_shape=tail_shape,
        threshold_value=threshold,
        threshold_q=threshold_q,
    )


def blended_cdf(marginal: BlendedMarginal, x):
    x_arr = np.asarray(x, dtype=float)
    m = marginal
    u = m.threshold_value
    gamma_u = special.gammainc(m.bulk_shape, m.bulk_rate * u)
    below = m.threshold_q * special.gammainc(
        m.bulk_shape, m.bulk_rate * np.clip(x_arr, 0.0, u)
    ) / gamma_u
    excess = np.maximum(x_arr - u, 0.0)
    tail = stats.genpareto.cdf(excess, m.tail_shape, scale=m.tail_scale)
    out = np.where(x_arr <= u, below, m.threshold_q + (1.0 - m.threshold_q) * tail)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ResponseTransform:
    """Training-set marginal for the response, mapping it to unit Frechet."""

    method: str
    marginal: object

    @classmethod
    def fit(cls, y, method: str = "rank", threshold_q: float = 0.95) -> "ResponseTransform":
        if method == "rank":
            marginal = EmpiricalMarginal.from_data(y)
            if marginal.is_degenerate:
                raise FitError("response is constant")
            return cls("rank", marginal)
        if method == "blended":
            return cls("blended", fit_blended(y, threshold_q))
        raise DomainError(f"unknown response marginal {method!r}")

    def apply(self, y) -> np.ndarray:
        if self.method == "rank":
            u = empirical_cdf(self.marginal, y)
        else:
            u = blended_cdf(self.marginal, y)
        u = np.clip(np.asarray(u, dtype=float), 1e-12, 1.0 - 1e-12)
        return to_frechet(u)
