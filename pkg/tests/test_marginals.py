import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from tailcombo.errors import DomainError, FitError
from tailcombo.marginals import (
    BlendedMarginal,
    EmpiricalMarginal,
    ResponseTransform,
    blended_cdf,
    empirical_cdf,
    fit_blended,
    frechet_cdf,
    to_frechet,
    to_normal,
)


@pytest.mark.parametrize(
    "values, x, expected",
    [([1, 2, 3], 2, 0.5), ([1, 2, 3], 3, 0.75), ([5, 5], 5, 0.5)],
)
def test_empirical_cdf_examples(values, x, expected):
    assert empirical_cdf(EmpiricalMarginal.from_data(values), x) == pytest.approx(expected, abs=1e-15)


def test_empirical_cdf_out_of_sample_clamp():
    m = EmpiricalMarginal.from_data([1.0, 2.0, 3.0, 4.0])
    assert empirical_cdf(m, -10.0) == pytest.approx(0.5 / 5)
    assert empirical_cdf(m, 99.0) == pytest.approx(1 - 0.5 / 5)
    # between two sample points: halfway between their ranks
    assert empirical_cdf(m, 2.5) == pytest.approx(2.5 / 5)


def test_marginal_needs_two_points():
    with pytest.raises(DomainError):
        EmpiricalMarginal.from_data([1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60, unique=True))
def test_rank_image_is_weibull_positions(values):
    m = EmpiricalMarginal.from_data(values)
    u = np.sort(empirical_cdf(m, np.asarray(values)))
    n = len(values)
    assert np.allclose(u, np.arange(1, n + 1) / (n + 1), atol=1e-15)


@given(st.lists(st.integers(0, 5), min_size=2, max_size=40))
def test_ties_get_average_rank(values):
    v = np.asarray(values, float)
    u = empirical_cdf(EmpiricalMarginal.from_data(v), v) * (v.size + 1)
    assert np.allclose(u, stats.rankdata(v, method="average"))


def test_to_frechet_examples():
    assert to_frechet(math.exp(-1)) == pytest.approx(1.0, abs=1e-14)
    assert to_frechet(0.5) == pytest.approx(1.4426950408889634, abs=1e-12)
    assert to_frechet(0.95) == pytest.approx(19.495725, abs=1e-5)


def test_to_normal_examples():
    assert to_normal(0.5) == 0.0
    assert to_normal(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    assert to_normal(0.025) == pytest.approx(-1.959963984540054, abs=1e-12)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5, float("nan")])
def test_transforms_reject_out_of_range(bad):
    with pytest.raises(DomainError):
        to_frechet(bad)
    with pytest.raises(DomainError):
        to_normal(bad)


@given(st.floats(1e-6, 1 - 1e-6))
def test_frechet_roundtrip(u):
    assert abs(frechet_cdf(to_frechet(u)) - u) < 1e-12


@given(st.floats(1e-9, 1 - 1e-9), st.floats(1e-9, 1 - 1e-9))
def test_transforms_increasing(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    assert to_frechet(lo) < to_frechet(hi)
    assert to_normal(lo) < to_normal(hi)


def test_exponential_tail_recovered_in_most_seeds():
    # Monte Carlo tolerance: ~500 exceedances per fit, so a few seeds miss.
    inside = 0
    for seed in range(20):
        m = fit_blended(np.random.default_rng(seed).exponential(size=10_000), 0.95)
        inside += abs(m.tail_shape) <= 0.1 and abs(m.tail_scale - 1) <= 0.15
    assert inside >= 18


def test_gamma_bulk_shape():
    for seed in range(5):
        m = fit_blended(np.random.default_rng(seed).gamma(2.0, 1.0, size=10_000), 0.95)
        assert abs(m.bulk_shape - 2.0) <= 0.2


def test_blended_degenerate_and_invalid():
    with pytest.raises(FitError):
        fit_blended(np.full(100, 3.0))
    with pytest.raises(FitError):
        fit_blended(np.random.default_rng(0).normal(size=200))
    with pytest.raises(FitError):
        fit_blended(np.ones(10) + np.arange(10))


def test_blended_cdf_closed_forms():
    m = BlendedMarginal(2.0, 1.0, tail_scale=0.8, tail_shape=0.0, threshold_value=4.0, threshold_q=0.95)
    assert blended_cdf(m, 4.0) == pytest.approx(0.95, abs=1e-12)
    assert blended_cdf(m, -50.0) == 0.0
    assert blended_cdf(m, 4.8) == pytest.approx(0.95 + 0.05 * (1 - math.exp(-1)), abs=1e-12)
    left = blended_cdf(m, 4.0 - 1e-11)
    right = blended_cdf(m, 4.0 + 1e-11)
    assert abs(right - left) < 1e-10


@given(st.lists(st.floats(0, 20), min_size=2, max_size=50))
def test_blended_cdf_nondecreasing(xs):
    m = BlendedMarginal(1.5, 0.7, tail_scale=1.3, tail_shape=0.2, threshold_value=5.0)
    x = np.sort(xs)
    assert np.all(np.diff(blended_cdf(m, x)) >= -1e-15)


def test_response_transform_rank_is_frechet():
    y = np.random.default_rng(1).normal(size=999)
    z = ResponseTransform.fit(y).apply(y)
    u = np.sort(np.exp(-1.0 / z))
    assert np.allclose(u, np.arange(1, 1000) / 1000)


def test_response_transform_blended_positive():
    y = np.random.default_rng(2).gamma(3.0, 2.0, size=2000)
    z = ResponseTransform.fit(y, "blended").apply(y)
    assert np.all(z > 0) and np.all(np.isfinite(z))
