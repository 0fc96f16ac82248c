"""Transformed linear combinations of covariates.

Raw covariates go to the N(0,1) scale through rank transforms; squares and
interactions are formed from those normal scores and every design column is
then standardized (training mean and sd).  A coefficient vector is
parametrized by spherical angles and scaled so that ``beta' Sigma beta = 1``,
which makes ``X beta`` approximately N(0,1) and ``-1/log Phi(X beta)``
approximately unit Frechet.

An optional precipitation block adds an indicator ``I{P_t > c}`` and
interactions of the indicator with continuous covariates.  Its coefficients
are unconstrained, and the linear predictor then follows a two-component
Gaussian mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .data import Sample, Term
from .errors import ConstraintError, DataError, DesignError, EstimationError
from .marginals import EmpiricalMarginal, empirical_cdf

__all__ = [
    "DesignConfig",
    "DesignTransform",
    "DesignMatrix",
    "PolarCoefficients",
    "MixtureGaussian",
    "build_design",
    "spherical_directions",
    "polar_to_beta",
    "betas_from_angles",
    "beta_to_polar",
    "angle_bounds",
    "linear_predictor",
    "mixture_distribution",
    "normal_to_frechet",
    "combine_and_transform",
    "U_CLAMP",
]

U_CLAMP = 1e-12
Z_LO = float(special.ndtri(U_CLAMP))
Z_HI = -Z_LO
MIN_PRECIP_ROWS = 30


@dataclass(frozen=True)
class DesignConfig:
    corr_cap: float = 0.9
    precip_threshold: float = 0.01
    psi_mode: str = "conditional"

    def __post_init__(self):
        if self.psi_mode not in ("conditional", "pooled"):
            raise ValueError(f"psi_mode must be 'conditional' or 'pooled', got {self.psi_mode!r}")


@dataclass(frozen=True)
class DesignTransform:
    """Training-set transforms, reusable on held-out rows."""

    terms: tuple
    extra_factors: tuple
    marginals: dict
    center: np.ndarray
    scale: np.ndarray
    precip_column: str | None
    precip_threshold: float

    def normal_scores(self, sample: Sample) -> dict:
        scores = {}
        for name, marginal in self.marginals.items():
            u = empirical_cdf(marginal, sample.column(name))
            scores[name] = special.ndtri(u)
        return scores

    def apply(self, sample: Sample):
        scores = self.normal_scores(sample)
        raw = [_term_values(t, scores) for t in self.terms]
        raw += [scores[f] for f in self.extra_factors]
        cols = (np.column_stack(raw) - self.center) / self.scale
        k = len(self.terms)
        main, extra = cols[:, :k], cols[:, k:]
        indicator = None
        if self.precip_column is not None:
            indicator = sample.column(self.precip_column) > self.precip_threshold
        return main, extra, indicator


def _term_values(term: Term, scores: dict) -> np.ndarray:
    if term.kind == "main":
        return scores[term.a]
    if term.kind == "square":
        return scores[term.a] ** 2
    if term.kind == "inter":
        return scores[term.a] * scores[term.b]
    raise ValueError(f"{term.kind} is not a continuous term")


@dataclass(frozen=True)
class DesignMatrix:
    """Standardized design columns with their covariance.

    ``extra`` holds covariates that only enter through precipitation
    interactions; ``overlap`` indexes main columns that also carry one.
    """

    columns: np.ndarray
    names: tuple
    covariance: np.ndarray
    transform: DesignTransform
    indicator: np.ndarray | None = None
    extra: np.ndarray | None = None
    extra_names: tuple = ()
    overlap: tuple = ()
    psi: np.ndarray | None = None
    p: float | None = None
    n_precip_rows: int = 0
    precip_threshold: float | None = None

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def k(self) -> int:
        return self.columns.shape[1]

    @property
    def has_precip(self) -> bool:
        return self.indicator is not None

    @property
    def n_precip_free(self) -> int:
        if not self.has_precip:
            return 0
        return 1 + len(self.overlap) + len(self.extra_names)

    @property
    def precip_block_map(self) -> dict:
        """Main effects ``k``, precipitation interactions ``l`` and overlaps ``m``."""
        m = len(self.overlap)
        return {"k": self.k, "l": m + len(self.extra_names), "m": m}

    def apply(self, sample: Sample) -> "DesignMatrix":
        """Same transforms and covariance estimates, new rows."""
        main, extra, indicator = self.transform.apply(sample)
        return replace(
            self,
            columns=main,
            extra=extra if self.has_precip else None,
            indicator=indicator if self.has_precip else None,
        )


def build_design(sample: Sample, terms, config: DesignConfig = DesignConfig()) -> DesignMatrix:
    """Rank-transform, expand and standardize the selected terms.

    Raises
    ------
    DesignError
        For an empty model, a constant or singular column, or a pair of
        columns whose absolute correlation exceeds ``config.corr_cap``.
    """
    terms = tuple(terms)
    cont = tuple(t for t in terms if t.is_continuous)
    indicators = [t for t in terms if t.kind == "indicator"]
    precip_terms = [t for t in terms if t.kind == "precip"]
    if not cont:
        raise DesignError("model selects no continuous column")
    if len(set(cont)) != len(cont):
        raise DesignError("duplicate terms in model")
    if len({t.a for t in indicators} | {t.b for t in precip_terms}) > 1:
        raise DesignError("only one semi-continuous (precipitation) covariate is supported")
    if precip_terms and not indicators:
        raise DesignError("precipitation interactions require the indicator term")
    precip_col = indicators[0].a if indicators else None

    overlap, extra_factors = [], []
    for t in precip_terms:
        main = Term("main", t.a)
        if main in cont:
            overlap.append(cont.index(main))
        else:
            extra_factors.append(t.a)
    factors = sorted({f for t in cont for f in t.factors} | set(extra_factors))
    needed = factors + ([precip_col] if precip_col else [])
    for name in needed:
        if name not in sample.names:
            raise DataError(f"unknown covariate {name!r}")
    if not sample.complete_rows(needed).all():
        raise DataError("selected columns contain missing values; filter rows first")

    marginals = {}
    for name in factors:
        marginal = EmpiricalMarginal.from_data(sample.column(name))
        if marginal.is_degenerate:
            raise DesignError(f"covariate {name!r} is constant")
        marginals[name] = marginal

    partial = DesignTransform(
        terms=cont,
        extra_factors=tuple(extra_factors),
        marginals=marginals,
        center=np.zeros(len(cont) + len(extra_factors)),
        scale=np.ones(len(cont) + len(extra_factors)),
        precip_column=precip_col,
        precip_threshold=config.precip_threshold,
    )
    main, extra, indicator = partial.apply(sample)
    allcols = np.column_stack([main, extra]) if extra.size else main
    names = tuple(t.name for t in cont) + tuple(extra_factors)
    center = allcols.mean(axis=0)
    scale = allcols.std(axis=0, ddof=1)
    for name, s in zip(names, scale):
        if not s > 1e-12:
            raise DesignError(f"design column {name!r} is constant")
    transform = replace(partial, center=center, scale=scale)
    main, extra, indicator = transform.apply(sample)
    allcols = np.column_stack([main, extra]) if extra.size else main

    corr = np.atleast_2d(np.cov(allcols, rowvar=False, ddof=1))
    if corr.shape[0] > 1:
        off = np.abs(corr - np.diag(np.diag(corr)))
        i, j = np.unravel_index(np.argmax(off), off.shape)
        if off[i, j] > config.corr_cap:
            raise DesignError(
                f"columns {names[min(i, j)]!r} and {names[max(i, j)]!r} have "
                f"|corr| = {off[i, j]:.3f} > {config.corr_cap}"
            )
    covariance = corr[: len(cont), : len(cont)].copy()
    if np.linalg.eigvalsh(covariance).min() < 1e-10:
        raise DesignError("design covariance is singular")

    if precip_col is None:
        return DesignMatrix(
            columns=main, names=tuple(t.name for t in cont), covariance=covariance,
            transform=transform,
        )
    rows = indicator if config.psi_mode == "conditional" else np.ones_like(indicator)
    n1 = int(indicator.sum())
    psi = None
    if rows.sum() >= 2:
        psi = np.atleast_2d(np.cov(allcols[rows], rowvar=False, ddof=1))
    return DesignMatrix(
        columns=main,
        names=tuple(t.name for t in cont),
        covariance=covariance,
        transform=transform,
        indicator=indicator,
        extra=extra,
        extra_names=tuple(extra_factors),
        overlap=tuple(overlap),
        psi=psi,
        p=float(indicator.mean()),
        n_precip_rows=n1,
        precip_threshold=config.precip_threshold,
    )


# -- polar parametrization ------------------------------------------------------


@dataclass(frozen=True)
class PolarCoefficients:
    """Angles of the constrained coefficients plus free precipitation ones.

    For ``k >= 2`` there are ``k - 1`` angles, the first ``k - 2`` in
    ``[0, pi]`` and the last in ``[0, 2 pi)``.  A single-column model keeps one
    angle restricted to ``{0, pi}``, which only encodes the sign.
    """

    theta: np.ndarray
    precip_free: np.ndarray | None = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "theta", theta)
        if self.precip_free is not None:
            object.__setattr__(
                self, "precip_free", np.atleast_1d(np.asarray(self.precip_free, dtype=float))
            )



def angle_bounds(k: int):
    """Lower and upper bounds of the angle box for ``k`` coefficients."""
    if k < 2:
        return np.zeros(0), np.zeros(0)
    upper = np.full(k - 1, np.pi)
    upper[-1] = 2 * np.pi
    return np.zeros(k - 1), upper


def spherical_directions(theta, k: int | None = None) -> np.ndarray:
    """Unit vectors from spherical angles, along the last axis.

    ``d_1 = cos t_1``, ``d_j = sin t_1 ... sin t_{j-1} cos t_j`` and
    ``d_k = sin t_1 ... sin t_{k-1}``.
    """
    theta = np.asarray(theta, dtype=float)
    if k == 1:
        return np.cos(theta[..., :1])
    m = theta.shape[-1]
    out = np.empty(theta.shape[:-1] + (m + 1,))
    sin_prod = np.ones(theta.shape[:-1])
    for j in range(m):
        out[..., j] = sin_prod * np.cos(theta[..., j])
        sin_prod = sin_prod * np.sin(theta[..., j])
    out[..., m] = sin_prod
    return out


def betas_from_angles(theta, covariance) -> np.ndarray:
    """Scale spherical directions onto the ellipsoid ``b' S b = 1``.

    Works row-wise on a population of angle vectors; rows whose direction
    has (numerically) zero variance come back as NaN.
    """
    covariance = np.atleast_2d(covariance)
    k = covariance.shape[0]
    d = spherical_directions(theta, k)
    quad = np.einsum("...i,ij,...j->...", d, covariance, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(quad > 1e-14, 1.0 / np.sqrt(np.where(quad > 1e-14, quad, 1.0)), np.nan)
    return d * r[..., None]


def polar_to_beta(coeffs, covariance) -> np.ndarray:
    theta = coeffs.theta if isinstance(coeffs, PolarCoefficients) else np.atleast_1d(coeffs)
    covariance = np.atleast_2d(covariance)
    k = covariance.shape[0]
    expected = 1 if k == 1 else k - 1
    if theta.size != expected:
        raise ConstraintError(f"{theta.size} angles given for {k} coefficients")
    beta = betas_from_angles(theta, covariance)
    if not np.all(np.isfinite(beta)):
        raise ConstraintError("direction lies in the null space of the covariance")
    return beta


def beta_to_polar(beta, covariance, precip_free=None, tol=1e-6) -> PolarCoefficients:
    """Canonical angles of a coefficient vector already on the ellipsoid."""
    beta = np.asarray(beta, dtype=float).ravel()
    covariance = np.atleast_2d(covariance)
    resid = float(beta @ covariance @ beta) - 1.0
    if abs(resid) > tol:
        raise ConstraintError(f"beta' S beta - 1 = {resid:.3g} exceeds {tol}")
    k = beta.size
    if k == 1:
        return PolarCoefficients(np.array([0.0 if beta[0] > 0 else np.pi]), precip_free)
    d = beta / np.linalg.norm(beta)
    theta = np.empty(k - 1)
    # tail norms: ||d_{j:}|| for each j
    tail = np.sqrt(np.cumsum((d ** 2)[::-1])[::-1])
    for j in range(k - 2):
        theta[j] = np.arctan2(tail[j + 1], d[j])
    theta[-1] = np.mod(np.arctan2(d[-1], d[-2]), 2 * np.pi)
    return PolarCoefficients(theta, precip_free)


# -- mixture and Frechet transform -------------------------------------------


@dataclass(frozen=True)
class MixtureGaussian:
    """``(1 - p) N(0, 1) + p N(mean1, var1)``."""

    p: float
    mean1: float
    var1: float
    mean0: float = 0.0
    var0: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise EstimationError(f"mixture weight {self.p} outside [0, 1]")
        if not self.var1 > 0:
            raise EstimationError("precipitation component has non-positive variance")

    def cdf(self, z):
        s1 = np.sqrt(self.var1)
        return (1 - self.p) * special.ndtr(z) + self.p * special.ndtr((z - self.mean1) / s1)

    def sf(self, z):
        s1 = np.sqrt(self.var1)
        return (1 - self.p) * special.ndtr(-z) + self.p * special.ndtr((self.mean1 - z) / s1)


def _split_free(design: DesignMatrix, free):
    free = np.asarray(free, dtype=float)
    m = len(design.overlap)
    return free[..., 0], free[..., 1 : 1 + m], free[..., 1 + m :]


def mixture_distribution(design: DesignMatrix, coeffs: PolarCoefficients) -> MixtureGaussian:
    if not design.has_precip:
        raise EstimationError("design has no precipitation block")
    if design.n_precip_rows < MIN_PRECIP_ROWS:
        raise EstimationError(
            f"only {design.n_precip_rows} indicator rows; need {MIN_PRECIP_ROWS} for the mixture"
        )
    beta = polar_to_beta(coeffs, design.covariance)
    return _mixture_from(design, beta, coeffs.precip_free)


def _mixture_from(design, beta, free):
    if free is None or np.size(free) != design.n_precip_free:
        raise ConstraintError(
            f"expected {design.n_precip_free} precipitation coefficients"
        )
    b0, b_ov, b_ex = _split_free(design, free)
    lam_main = np.array(beta, dtype=float, copy=True)
    for i, idx in enumerate(design.overlap):
        lam_main[idx] += b_ov[i]
    lam = np.concatenate([lam_main, b_ex])
    var1 = float(lam @ design.psi @ lam)
    if not var1 > 1e-12:
        raise EstimationError(f"degenerate precipitation-component variance {var1:.3g}")
    return MixtureGaussian(p=float(design.p), mean1=float(b0), var1=var1)


def linear_predictor(design: DesignMatrix, beta, precip_free=None) -> np.ndarray:
    z = design.columns @ np.asarray(beta, dtype=float)
    if design.has_precip:
        b0, b_ov, b_ex = _split_free(design, precip_free)
        block = b0 + design.columns[:, list(design.overlap)] @ b_ov
        if design.extra_names:
            block = block + design.extra @ b_ex
        z = z + design.indicator * block
    return z


def normal_to_frechet(z):
    """``-1 / log Phi(z)`` with Phi clamped to ``[1e-12, 1 - 1e-12]``.

    Returns the values and the number of clamped entries.
    """
    z = np.asarray(z, dtype=float)
    clamped = int(np.count_nonzero((z < Z_LO) | (z > Z_HI)))
    zc = np.clip(z, Z_LO, Z_HI)
    return -1.0 / special.log_ndtr(zc), clamped


def _mixture_to_frechet(mix: MixtureGaussian, z):
    u = mix.cdf(z)
    s = mix.sf(z)
    low, high = u < U_CLAMP, s < U_CLAMP
    clamped = int(np.count_nonzero(low | high))
    u = np.where(low, U_CLAMP, u)
    s = np.where(high, U_CLAMP, s)
    logu = np.where(u < 0.5, np.log(np.maximum(u, U_CLAMP)), np.log1p(-s))
    return -1.0 / logu, clamped


def combine_and_transform(design: DesignMatrix, coeffs: PolarCoefficients, return_clamped=False):
    """The Frechet-scale series ``G^{-1}(F(X beta))`` for one coefficient set.

    ``F`` is the standard normal CDF, or the Gaussian mixture when the design
    has a precipitation block.
    """
    if design.has_precip != (coeffs.precip_free is not None):
        raise ConstraintError("precipitation coefficients do not match the design")
    beta = polar_to_beta(coeffs, design.covariance)
    z = linear_predictor(design, beta, coeffs.precip_free)
    if design.has_precip and design.n_precip_rows > 0:
        if design.n_precip_rows < MIN_PRECIP_ROWS:
            raise EstimationError(
                f"only {design.n_precip_rows} indicator rows; need {MIN_PRECIP_ROWS} for the mixture"
            )
        values, clamped = _mixture_to_frechet(_mixture_from(design, beta, coeffs.precip_free), z)
    else:
        values, clamped = normal_to_frechet(z)
    return (values, clamped) if return_clamped else values
