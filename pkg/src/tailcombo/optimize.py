"""Minimizing the smooth-threshold gamma objective over the coefficient angles.

The objective for a design, a Frechet-scale response and a smooth threshold
is ``gamma_hat(X**(beta), Y**, smooth)``.  It is continuous in the angles, so
a plain differential evolution (rand/1/bin, reflecting bounds) over the angle
box works well; precipitation coefficients are boxed to ``[-10, 10]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import special

from .data import Sample
from .errors import BootstrapError, NumericError, OptimizationError, TailComboError
from .lincomb import (
    Z_HI,
    Z_LO,
    DesignConfig,
    DesignMatrix,
    PolarCoefficients,
    _mixture_to_frechet,
    _split_free,
    angle_bounds,
    beta_to_polar,
    betas_from_angles,
    build_design,
    combine_and_transform,
    MixtureGaussian,
    polar_to_beta,
)
from .marginals import EmpiricalMarginal, ResponseTransform, rank_to_frechet
from .parallel import pmap
from .rng import derive_seed, make_rng
from .taildep import SmoothThreshold, gamma_hat, _weights

__all__ = [
    "OptimizerConfig",
    "FitSettings",
    "Objective",
    "FitResult",
    "make_objective",
    "evaluate",
    "fit",
    "grid_oracle",
    "fit_sample",
    "bootstrap_se",
    "BootstrapResult",
]

# Points whose smooth weight is certainly below Phi(-PRUNE_Z) are skipped in
# the population kernel; exact evaluation never prunes.
PRUNE_Z = 10.0


@dataclass(frozen=True)
class OptimizerConfig:
    """Differential evolution settings.

    ``population=None`` means ``15 * dim``.  A positive ``tol`` stops a
    restart early once the spread of population values drops below it.
    """

    population: int | None = None
    generations: int = 300
    crossover_prob: float = 0.9
    diff_weight: float = 0.8
    seed: int = 0
    restarts: int = 3
    tol: float = 0.0
    free_bound: float = 10.0

    def __post_init__(self):
        if self.population is not None and self.population < 10:
            raise ValueError("population must be at least 10")
        if self.generations < 1 or self.restarts < 1:
            raise ValueError("generations and restarts must be positive")
        if not 0.0 < self.crossover_prob <= 1.0:
            raise ValueError("crossover_prob must lie in (0, 1]")
        if not 0.0 < self.diff_weight < 2.0:
            raise ValueError("diff_weight must lie in (0, 2)")

    def population_size(self, dim: int) -> int:
        return self.population if self.population is not None else max(10, 15 * dim)


@dataclass(frozen=True)
class FitSettings:
    """Everything needed to go from a raw sample to a fitted model."""

    sigma: float = 1.25
    r0: float | None = None
    r0_quantile: float = 0.95
    response_marginal: str = "rank"
    blended_q: float = 0.95
    design: DesignConfig = field(default_factory=DesignConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@numba.njit(cache=True)
def _population_gamma(Z, y, zstar, r0, sigma, zlo, zhi):
    """Smooth gamma for each row of linear predictors ``Z`` (population x n)."""
    npop, n = Z.shape
    out = np.empty(npop)
    sqrt2 = math.sqrt(2.0)
    inv = 1.0 / (sigma * sqrt2)
    for p in range(npop):
        num = 0.0
        den = 0.0
        for t in range(n):
            z = Z[p, t]
            if z < zstar[t]:
                continue
            if z < zlo:
                z = zlo
            elif z > zhi:
                z = zhi
            if z > 0.0:
                lp = math.log1p(-0.5 * math.erfc(z / sqrt2))
            else:
                lp = math.log(0.5 * math.erfc(-z / sqrt2))
            xf = -1.0 / lp
            r = xf + y[t]
            w = 0.5 * math.erfc(-(r - r0) * inv)
            if w < 1e-300:
                continue
            num += w * abs(xf - y[t]) / r
            den += w
        out[p] = num / den if den > 0.0 else np.nan
    return out


@dataclass(frozen=True)
class Objective:
    design: DesignMatrix
    response: np.ndarray
    thr: SmoothThreshold
    free_bound: float = 10.0
    sign_theta: float = 0.0
    _zstar: np.ndarray = field(init=False, repr=False, compare=False)
    _columns_t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.response, dtype=float)
        if y.shape != (self.design.n,):
            raise NumericError(
                f"response length {y.size} does not match {self.design.n} design rows"
            )
        if np.any(~(y > 0)):
            raise NumericError("response must be on the (positive) Frechet scale")
        object.__setattr__(self, "response", y)
        # smallest linear predictor that can give a point weight >= Phi(-PRUNE_Z)
        x_min = self.thr.r0 - PRUNE_Z * self.thr.sigma - y
        with np.errstate(divide="ignore", over="ignore"):
            zstar = np.where(
                x_min > 0, special.ndtri(np.exp(-1.0 / np.where(x_min > 0, x_min, 1.0))), -np.inf
            )
        object.__setattr__(self, "_zstar", zstar)
        object.__setattr__(self, "_columns_t", np.ascontiguousarray(self.design.columns.T))

    @property
    def n_angles(self) -> int:
        return max(self.design.k - 1, 0)

    @property
    def dim(self) -> int:
        return self.n_angles + self.design.n_precip_free

    def bounds(self):
        lo, hi = angle_bounds(self.design.k)
        nf = self.design.n_precip_free
        lo = np.concatenate([lo, np.full(nf, -self.free_bound)])
        hi = np.concatenate([hi, np.full(nf, self.free_bound)])
        return lo, hi

    def coeffs(self, params) -> PolarCoefficients:
        params = np.asarray(params, dtype=float).ravel()
        if self.design.k == 1:
            theta = np.array([self.sign_theta])
        else:
            theta = params[: self.n_angles]
        free = params[self.n_angles :] if self.design.has_precip else None
        return PolarCoefficients(theta, free)

    def betas(self, population) -> np.ndarray:
        population = np.atleast_2d(population)
        if self.design.k == 1:
            theta = np.full((population.shape[0], 1), self.sign_theta)
        else:
            theta = population[:, : self.n_angles]
        return betas_from_angles(theta, self.design.covariance)

    def evaluate_population(self, population) -> np.ndarray:
        """Objective for each row of parameters; infeasible rows give ``inf``."""
        population = np.atleast_2d(np.asarray(population, dtype=float))
        betas = self.betas(population)
        if self.design.has_precip and self.design.n_precip_rows > 0:
            values = self._mixture_population(betas, population[:, self.n_angles :])
        else:
            ok = np.all(np.isfinite(betas), axis=1)
            values = np.full(population.shape[0], np.inf)
            if ok.any():
                values[ok] = _population_gamma(
                    np.ascontiguousarray(betas[ok] @ self._columns_t),
                    self.response,
                    self._zstar,
                    float(self.thr.r0),
                    float(self.thr.sigma),
                    Z_LO,
                    Z_HI,
                )
        return np.where(np.isfinite(values), values, np.inf)

    def _mixture_population(self, betas, free):
        d = self.design
        out = np.full(betas.shape[0], np.inf)
        for i in range(betas.shape[0]):
            if not np.all(np.isfinite(betas[i])):
                continue
            b0, b_ov, b_ex = _split_free(d, free[i])
            lam = betas[i].copy()
            for j, idx in enumerate(d.overlap):
                lam[idx] += b_ov[j]
            lam = np.concatenate([lam, b_ex])
            var1 = float(lam @ d.psi @ lam)
            if not var1 > 1e-12:
                continue
            z = d.columns @ betas[i]
            block = b0 + d.columns[:, list(d.overlap)] @ b_ov
            if d.extra_names:
                block = block + d.extra @ b_ex
            z = z + d.indicator * block
            xf, _ = _mixture_to_frechet(MixtureGaussian(d.p, float(b0), var1), z)
            r = xf + self.response
            w = _weights(r, self.thr, "smooth")
            total = w.sum()
            if total > 0:
                out[i] = np.dot(w, np.abs(xf - self.response) / r) / total
        return out


def initial_direction(k: int) -> np.ndarray:
    return np.full(k, 1.0 / np.sqrt(k))


def make_objective(design: DesignMatrix, response, sigma=1.25, r0=None, r0_quantile=0.95,
                   free_bound=10.0) -> Objective:
    """Objective with ``r0`` frozen before optimization.

    Without an explicit ``r0`` the threshold is the ``r0_quantile`` quantile
    of the radial components at the equal-weight direction (precipitation
    coefficients zero).  The linear combination is rank-transformed to unit
    Frechet for this, so the threshold does not depend on how far the
    combination is from normal.
    """
    response = np.asarray(response, dtype=float)
    if r0 is None:
        d = initial_direction(design.k)
        beta = d / np.sqrt(d @ design.covariance @ d)
        coeffs = beta_to_polar(beta, design.covariance)
        if design.has_precip:
            coeffs = PolarCoefficients(coeffs.theta, np.zeros(design.n_precip_free))
        x = combine_and_transform(design, coeffs)
        x = rank_to_frechet(EmpiricalMarginal.from_data(x), x)
        r0 = float(np.quantile(x + response, r0_quantile))
    return Objective(design, response, SmoothThreshold(r0=r0, sigma=sigma), free_bound)


def evaluate(obj: Objective, coeffs: PolarCoefficients) -> float:
    """Exact smooth-threshold gamma for one coefficient set."""
    x = combine_and_transform(obj.design, coeffs)
    return gamma_hat(x, obj.response, obj.thr, mode="smooth")


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    theta_hat: PolarCoefficients
    gamma_score: float
    n_effective: float
    trace: np.ndarray
    clamp_count: int
    names: tuple = ()
    r0: float = float("nan")
    sigma: float = float("nan")
    evaluations: int = 0

    def as_dict(self) -> dict:
        out = {
            "names": list(self.names),
            "beta_hat": [float(b) for b in self.beta_hat],
            "theta_hat": [float(t) for t in self.theta_hat.theta],
            "gamma_score": float(self.gamma_score),
            "n_effective": float(self.n_effective),
            "clamp_count": int(self.clamp_count),
            "r0": float(self.r0),
            "sigma": float(self.sigma),
            "evaluations": int(self.evaluations),
            "trace": [float(v) for v in self.trace],
        }
        if self.theta_hat.precip_free is not None:
            out["precip_free"] = [float(v) for v in self.theta_hat.precip_free]
        return out


def _reflect(x, lo, hi, rng):
    span = hi - lo
    x = np.where(x < lo, 2 * lo - x, x)
    x = np.where(x > hi, 2 * hi - x, x)
    bad = (x < lo) | (x > hi)
    if bad.any():
        x = np.where(bad, lo + rng.random(x.shape) * span, x)
    return x


def _differential_evolution(func, lo, hi, cfg: OptimizerConfig, rng, init=None, callback=None):
    """One rand/1/bin run; returns best params, best value, per-generation bests."""
    dim = lo.size
    npop = init.shape[0] if init is not None else cfg.population_size(dim)
    if init is None:
        pop = lo + rng.random((npop, dim)) * (hi - lo)
    else:
        pop = np.array(init, dtype=float)
    vals = func(pop)
    evals = npop
    trace = []
    rows = np.arange(npop)
    for gen in range(cfg.generations):
        keys = rng.random((npop, npop))
        keys[rows, rows] = np.inf
        picks = np.argpartition(keys, 3, axis=1)[:, :3]
        mutant = pop[picks[:, 0]] + cfg.diff_weight * (pop[picks[:, 1]] - pop[picks[:, 2]])
        cross = rng.random((npop, dim)) < cfg.crossover_prob
        cross[rows, rng.integers(0, dim, npop)] = True
        trial = _reflect(np.where(cross, mutant, pop), lo, hi, rng)
        trial_vals = func(trial)
        evals += npop
        better = trial_vals <= vals
        pop[better] = trial[better]
        vals[better] = trial_vals[better]
        trace.append(float(vals.min()))
        if callback is not None:
            callback(gen, trial, trial_vals)
        if cfg.tol > 0 and np.isfinite(vals).all() and np.ptp(vals) <= cfg.tol:
            break
    best = int(np.argmin(vals))
    return pop[best].copy(), float(vals[best]), trace, evals, pop, vals


def fit(obj: Objective, cfg: OptimizerConfig = OptimizerConfig(), init_population=None,
        callback=None) -> FitResult:
    """Best-of-restarts differential evolution over the angle box.

    ``callback(generation, betas, values)`` sees every trial population with
    its constrained coefficient vectors.
    """
    design = obj.design
    if design.k == 1:
        candidates = []
        for sign in (0.0, np.pi):
            sub = replace(obj, sign_theta=sign)
            if sub.dim == 0:
                value = float(sub.evaluate_population(np.zeros((1, 0)))[0])
                candidates.append((value, sub, np.zeros(0), [value], 1))
            else:
                res = _fit_box(sub, cfg, init_population, callback)
                candidates.append((res[1], sub, res[0], res[2], res[3]))
        value, sub, params, trace, evals = min(candidates, key=lambda c: c[0])
        if not np.isfinite(value):
            raise OptimizationError("every candidate evaluation failed (degenerate design?)")
        return _finish(sub, params, trace, sum(c[4] for c in candidates))
    params, value, trace, evals = _fit_box(obj, cfg, init_population, callback)
    return _finish(obj, params, trace, evals)


def _fit_box(obj: Objective, cfg, init_population, callback):
    lo, hi = obj.bounds()
    func = obj.evaluate_population
    wrapped = None
    if callback is not None:
        def wrapped(gen, trial, values):
            callback(gen, obj.betas(trial), values)
    best_p, best_v, trace, evals = None, np.inf, [], 0
    for restart in range(cfg.restarts):
        rng = make_rng(cfg.seed, restart)
        p, v, tr, ne, _, _ = _differential_evolution(
            func, lo, hi, cfg, rng, init=init_population, callback=wrapped
        )
        evals += ne
        if v < best_v or best_p is None:
            best_p, best_v = p, v
        trace.extend(tr)
    if not np.isfinite(best_v):
        raise OptimizationError("every candidate evaluation failed (degenerate design?)")
    return best_p, best_v, np.minimum.accumulate(np.asarray(trace)), evals


def _finish(obj: Objective, params, trace, evals) -> FitResult:
    coeffs = obj.coeffs(params)
    beta = polar_to_beta(coeffs, obj.design.covariance)
    x, clamped = combine_and_transform(obj.design, coeffs, return_clamped=True)
    score = gamma_hat(x, obj.response, obj.thr, mode="smooth")
    weights = _weights(x + obj.response, obj.thr, "smooth")
    return FitResult(
        beta_hat=beta,
        theta_hat=coeffs,
        gamma_score=score,
        n_effective=float(weights.sum()),
        trace=np.asarray(trace, dtype=float),
        clamp_count=clamped,
        names=obj.design.names,
        r0=obj.thr.r0,
        sigma=obj.thr.sigma,
        evaluations=int(evals),
    )


def grid_oracle(obj: Objective, resolution: int):
    """Brute-force minimum over a uniform grid of cell midpoints (``k <= 3``)."""
    k = obj.design.k
    if obj.design.has_precip:
        raise OptimizationError("grid oracle does not support a precipitation block")
    if k > 3:
        raise OptimizationError(f"grid oracle supports k <= 3, got k = {k}")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if k == 1:
        best = None
        for sign in (0.0, np.pi):
            sub = replace(obj, sign_theta=sign)
            c = sub.coeffs(np.zeros(0))
            v = evaluate(sub, c)
            if best is None or v < best[1]:
                best = (c, v)
        return best
    lo, hi = angle_bounds(k)
    axes = [lo[j] + (np.arange(resolution) + 0.5) * (hi[j] - lo[j]) / resolution for j in range(k - 1)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k - 1)
    values = np.concatenate(
        [obj.evaluate_population(chunk) for chunk in np.array_split(grid, max(1, grid.shape[0] // 4096))]
    )
    coeffs = obj.coeffs(grid[int(np.argmin(values))])
    return coeffs, evaluate(obj, coeffs)


# -- sample-level helpers -------------------------------------------------------


def prepare(sample: Sample, terms, settings: FitSettings = FitSettings()):
    """Design, Frechet response and objective for a raw sample."""
    design = build_design(sample, terms, settings.design)
    response_tf = ResponseTransform.fit(
        sample.response, settings.response_marginal, settings.blended_q
    )
    y = response_tf.apply(sample.response)
    obj = make_objective(
        design, y, sigma=settings.sigma, r0=settings.r0, r0_quantile=settings.r0_quantile,
        free_bound=settings.optimizer.free_bound,
    )
    return design, response_tf, obj


def fit_sample(sample: Sample, terms, settings: FitSettings = FitSettings()):
    design, response_tf, obj = prepare(sample, terms, settings)
    return fit(obj, settings.optimizer), obj


@dataclass(frozen=True)
class BootstrapResult:
    names: tuple
    estimates: np.ndarray
    se: np.ndarray
    failures: int

    def as_dict(self) -> dict:
        return {
            "names": list(self.names),
            "se": [float(s) for s in self.se],
            "failures": int(self.failures),
            "replicates": int(self.estimates.shape[0]),
        }


def _bootstrap_replicate(args):
    sample, terms, settings, seed, b = args
    rng = make_rng(seed, b)
    idx = rng.integers(0, sample.n, size=sample.n)
    opt = replace(settings.optimizer, seed=derive_seed(seed, b, 1))
    try:
        res, _ = fit_sample(sample.take(idx), terms, replace(settings, optimizer=opt))
    except TailComboError:
        return None
    return res.beta_hat


def bootstrap_se(sample: Sample, terms, settings: FitSettings = FitSettings(), n_boot: int = 200,
                 seed: int = 0, workers: int = 1) -> BootstrapResult:
    """Nonparametric bootstrap of the coefficient estimates.

    Rows are resampled jointly; marginal transforms, covariance, threshold and
    fit are all redone per replicate.  Replicate ``b`` uses its own seeded
    stream, so the first ``B`` replicates do not depend on the total count.
    """
    if n_boot < 50:
        raise ValueError("bootstrap needs at least 50 replicates")
    terms = list(terms)
    jobs = [(sample, terms, settings, seed, b) for b in range(n_boot)]
    results = pmap(_bootstrap_replicate, jobs, workers)
    good = [r for r in results if r is not None]
    failures = n_boot - len(good)
    if failures > 0.1 * n_boot:
        raise BootstrapError(f"{failures} of {n_boot} bootstrap refits failed")
    est = np.vstack(good)
    names = tuple(t.name for t in terms if t.is_continuous)
    return BootstrapResult(names=names, estimates=est, se=est.std(axis=0, ddof=1), failures=failures)
