import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from tailcombo.data import Sample, parse_terms
from tailcombo.errors import ConstraintError, DesignError, EstimationError
from tailcombo.lincomb import (
    DesignConfig,
    MixtureGaussian,
    PolarCoefficients,
    angle_bounds,
    beta_to_polar,
    betas_from_angles,
    build_design,
    combine_and_transform,
    linear_predictor,
    mixture_distribution,
    normal_to_frechet,
    polar_to_beta,
)
from tailcombo.simstudy import SimConfig, generate, model_terms


def gaussian_sample(rng, n, k, rho=0.0, extra=None):
    cov = rho ** np.abs(np.subtract.outer(np.arange(k), np.arange(k)))
    X = rng.multivariate_normal(np.zeros(k), cov, size=n)
    names = [f"X{i + 1}" for i in range(k)]
    if extra is not None:
        X = np.column_stack([X, extra])
        names.append("P")
    return Sample(rng.normal(size=n), X, names)


def random_spd(rng, k):
    a = rng.normal(size=(k, k))
    s = a @ a.T + k * np.eye(k) * 0.1
    d = np.sqrt(np.diag(s))
    return s / np.outer(d, d)


def random_theta(rng, k):
    lo, hi = angle_bounds(k)
    return lo + rng.random(k - 1) * (hi - lo)


# -- design ---------------------------------------------------------------------


def test_single_column_unit_covariance(rng):
    d = build_design(gaussian_sample(rng, 300, 1), parse_terms("X1"))
    assert abs(d.covariance[0, 0] - 1.0) < 1e-8
    assert d.columns.shape == (300, 1)


def test_independent_columns_small_correlation(rng):
    d = build_design(gaussian_sample(rng, 5000, 2), parse_terms("X1,X2"))
    assert abs(d.covariance[0, 1]) < 0.05


def test_m6_design_names():
    s = generate(SimConfig(n=500, seed=3))
    d = build_design(s, model_terms("M6"))
    assert d.names == ("X1", "X2", "X4", "X5", "X1*X5", "X2^2")
    assert np.allclose(d.columns.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(np.diag(d.covariance), 1, atol=1e-12)


def test_design_columns_are_normal_scores(rng):
    s = gaussian_sample(rng, 999, 1)
    d = build_design(s, parse_terms("X1"))
    ranks = stats.rankdata(s.column("X1"))
    z = special.ndtri(ranks / 1000)
    assert np.allclose(d.columns[:, 0], (z - z.mean()) / z.std(ddof=1))


def test_correlation_cap_names_pair(rng):
    x = rng.normal(size=400)
    s = Sample(rng.normal(size=400), np.column_stack([x, x + 0.01 * rng.normal(size=400), rng.normal(size=400)]),
               ["A", "B", "C"])
    with pytest.raises(DesignError, match="'A' and 'B'"):
        build_design(s, parse_terms("A,B,C"))


def test_constant_column_rejected(rng):
    s = Sample(rng.normal(size=50), np.column_stack([np.ones(50), rng.normal(size=50)]), ["A", "B"])
    with pytest.raises(DesignError, match="constant"):
        build_design(s, parse_terms("A,B"))


def test_apply_reuses_training_transform(rng):
    s = gaussian_sample(rng, 600, 2)
    d = build_design(s, parse_terms("X1,X2,X1*X2"))
    again = d.apply(s)
    assert np.array_equal(again.columns, d.columns)
    held = d.apply(s.take(np.arange(10)))
    assert np.array_equal(held.columns, d.columns[:10])


# -- polar ----------------------------------------------------------------------


def test_polar_examples():
    eye = np.eye(2)
    assert np.allclose(polar_to_beta(PolarCoefficients([0.0]), eye), [1, 0])
    assert np.allclose(polar_to_beta(PolarCoefficients([np.pi / 2]), eye), [0, 1], atol=1e-15)
    s = np.array([[1, 0.5], [0.5, 1]])
    assert np.allclose(polar_to_beta(PolarCoefficients([np.pi / 4]), s), [1 / np.sqrt(3)] * 2)
    assert beta_to_polar([1.0, 0.0], eye).theta[0] == 0.0
    assert beta_to_polar([0.0, -1.0], eye).theta[0] == pytest.approx(3 * np.pi / 2)


def test_constraint_holds_for_random_angles(rng):
    worst = 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 9))
        s = random_spd(rng, k)
        b = polar_to_beta(PolarCoefficients(random_theta(rng, k)), s)
        worst = max(worst, abs(b @ s @ b - 1))
    assert worst < 1e-10


def test_polar_roundtrip(rng):
    worst = 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 9))
        s = random_spd(rng, k)
        b = rng.normal(size=k)
        b /= np.sqrt(b @ s @ b)
        back = polar_to_beta(beta_to_polar(b, s), s)
        worst = max(worst, np.max(np.abs(back - b)))
    assert worst < 1e-8


def test_beta_to_polar_angles_in_box(rng):
    for k in (2, 3, 5):
        b = rng.normal(size=k)
        b /= np.linalg.norm(b)
        t = beta_to_polar(b, np.eye(k)).theta
        lo, hi = angle_bounds(k)
        assert np.all(t >= lo) and np.all(t < hi)


def test_beta_to_polar_rejects_off_ellipsoid():
    with pytest.raises(ConstraintError):
        beta_to_polar([2.0, 0.0], np.eye(2))


def test_vectorized_betas_match(rng):
    s = random_spd(rng, 4)
    thetas = np.array([random_theta(rng, 4) for _ in range(20)])
    many = betas_from_angles(thetas, s)
    one = np.array([polar_to_beta(PolarCoefficients(t), s) for t in thetas])
    assert np.allclose(many, one, atol=1e-14)


# -- Frechet transform --------------------------------------------------------------


def test_normal_to_frechet_values():
    v, c = normal_to_frechet(np.array([0.0, 1.6448536269514722, 50.0, -50.0]))
    assert v[0] == pytest.approx(1 / np.log(2), abs=1e-12)
    assert v[1] == pytest.approx(19.4957257, abs=1e-6)
    assert c == 2 and np.all(v > 0) and np.all(np.isfinite(v))


def test_exact_normal_inputs_give_uniform(rng):
    k, n = 4, 100_000
    cov = random_spd(rng, k)
    X = rng.multivariate_normal(np.zeros(k), cov, size=n)
    beta = polar_to_beta(PolarCoefficients(random_theta(rng, k)), cov)
    ks = stats.kstest(special.ndtr(X @ beta), "uniform").statistic
    assert ks < 1.5 / np.sqrt(n)


def test_combine_continuous_in_theta(rng):
    d = build_design(gaussian_sample(rng, 2000, 3, 0.3), parse_terms("X1,X2,X3"))
    theta = random_theta(rng, 3)
    base = combine_and_transform(d, PolarCoefficients(theta))
    for delta in (1e-4, 1e-6, 1e-8):
        moved = combine_and_transform(d, PolarCoefficients(theta + delta))
        rel = np.max(np.abs(moved - base) / base)
        assert rel < 1e3 * delta


# -- precipitation mixture -------------------------------------------------------


def precip_sample(rng, n, k, frac, rho=0.3):
    wet = rng.random(n) < frac
    p = np.where(wet, rng.exponential(0.5, size=n) + 0.02, 0.0)
    return gaussian_sample(rng, n, k, rho, extra=p)


def test_mixture_cdf_properties():
    mix = MixtureGaussian(0.3, 1.2, 0.7)
    z = np.linspace(-40, 40, 2001)
    u = mix.cdf(z)
    assert np.all(np.diff(u) >= 0)
    assert u[0] < 1e-300 and u[-1] == 1.0
    assert np.allclose(mix.cdf(z) + mix.sf(z), 1.0)


def test_mixture_var_one_when_blocks_coincide(rng):
    s = precip_sample(rng, 3000, 3, 0.4)
    d = build_design(s, parse_terms("X1,X2,X3,I(P),I(P)*X2"), DesignConfig(psi_mode="pooled"))
    coeffs = PolarCoefficients(random_theta(rng, 3), np.zeros(d.n_precip_free))
    mix = mixture_distribution(d, coeffs)
    assert mix.var1 == pytest.approx(1.0, abs=1e-10)
    assert mix.p == pytest.approx(d.indicator.mean())


def test_mixture_degenerate_variance(rng):
    s = precip_sample(rng, 1000, 1, 0.5)
    d = build_design(s, parse_terms("X1,I(P),I(P)*X1"), DesignConfig(psi_mode="pooled"))
    coeffs = PolarCoefficients([0.0], [0.5, -1.0])
    with pytest.raises(EstimationError):
        mixture_distribution(d, coeffs)


def test_mixture_needs_enough_rows(rng):
    s = precip_sample(rng, 1000, 2, 0.01)
    d = build_design(s, parse_terms("X1,X2,I(P)"))
    assert d.n_precip_rows < 30
    with pytest.raises(EstimationError):
        mixture_distribution(d, PolarCoefficients([0.3], [0.0]))


def test_no_wet_rows_matches_plain_path(rng):
    s = gaussian_sample(rng, 500, 2, extra=np.zeros(500))
    d = build_design(s, parse_terms("X1,X2,I(P)"))
    plain = build_design(s, parse_terms("X1,X2"))
    theta = [1.1]
    a = combine_and_transform(d, PolarCoefficients(theta, [0.7]))
    b = combine_and_transform(plain, PolarCoefficients(theta))
    assert np.array_equal(a, b)


def test_block_map(rng):
    s = precip_sample(rng, 800, 3, 0.4)
    d = build_design(s, parse_terms("X1,X2,I(P),I(P)*X1,I(P)*X3"))
    assert d.precip_block_map == {"k": 2, "l": 2, "m": 1}
    assert d.n_precip_free == 3


def test_precip_interaction_needs_indicator(rng):
    s = precip_sample(rng, 200, 2, 0.4)
    with pytest.raises(DesignError):
        build_design(s, parse_terms("X1,I(P)*X2"))


def mixture_ks(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    s = precip_sample(rng, 100_000, k + 1, rng.uniform(0.2, 0.6))
    main = [f"X{i + 1}" for i in range(k)]
    inter = [f"I(P)*X{int(rng.integers(1, k + 1))}", f"I(P)*X{k + 1}"]
    d = build_design(s, parse_terms(main + ["I(P)"] + sorted(set(inter))))
    free = rng.normal(scale=0.5, size=d.n_precip_free)
    coeffs = PolarCoefficients(random_theta(rng, k), free)
    mix = mixture_distribution(d, coeffs)
    z = linear_predictor(d, polar_to_beta(coeffs, d.covariance), free)[d.indicator]
    return stats.kstest(z, "norm", args=(mix.mean1, np.sqrt(mix.var1))).statistic


@pytest.mark.parametrize("seed", range(5))
def test_mixture_component_matches_monte_carlo(seed):
    assert mixture_ks(seed) < 0.02
