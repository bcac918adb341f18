import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from infonoise.errors import ConfigError, DegenerateProfileError, DomainError
from infonoise.grid import (
    Profile,
    SigmaRange,
    TabulatedDensity,
    build_log_grid,
    cumulative_integral,
    evaluate_density,
    integrate,
    inverse_cdf_sample,
    locate_bin,
    normalize_to_density,
    total_variation,
)

ranges = st.tuples(
    st.floats(1e-4, 1.0), st.floats(1.5, 1e3)
).map(lambda t: SigmaRange(t[0], t[0] * t[1]))


def positive_profiles(min_k=2, max_k=64):
    return st.integers(min_k, max_k).flatmap(
        lambda K: st.tuples(
            ranges,
            st.just(K),
            st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1e3)), min_size=K, max_size=K).filter(lambda v: sum(v) > 1e-3),
        )
    ).map(lambda t: Profile(build_log_grid(t[0], t[1]), np.array(t[2])))


# ---------------------------------------------------------------- SigmaRange


def test_sigma_range_defaults():
    r = SigmaRange()
    assert (r.sigma_min, r.sigma_max) == (0.002, 80.0)


@pytest.mark.parametrize("lo,hi", [(0.0, 1.0), (-1.0, 1.0), (2.0, 1.0), (1.0, 1.0), (1.0, math.inf)])
def test_sigma_range_rejects_invalid(lo, hi):
    with pytest.raises(ConfigError):
        SigmaRange(lo, hi)


# ---------------------------------------------------------------- build_log_grid


def test_two_cell_grid_edges_and_centers():
    g = build_log_grid(SigmaRange(1, 100), 2)
    np.testing.assert_allclose(g.edges, [1, 10, 100], rtol=1e-15)
    np.testing.assert_allclose(g.centers, [10**0.5, 10**1.5], rtol=1e-15)


def test_default_grid_midpoint_edge():
    g = build_log_grid(SigmaRange(0.002, 80), 128)
    assert g.edges[64] == pytest.approx(0.4, rel=1e-14)
    assert g.edges[0] == 0.002 and g.edges[-1] == 80.0


def test_grid_rejects_small_k():
    with pytest.raises(ConfigError):
        build_log_grid(SigmaRange(), 1)


def test_grid_arrays_are_read_only():
    g = build_log_grid(K=8)
    with pytest.raises(ValueError):
        g.edges[0] = 1.0


@given(ranges, st.integers(2, 300))
def test_grid_invariants(r, K):
    g = build_log_grid(r, K)
    assert np.all(np.diff(g.edges) > 0)
    assert g.edges[0] == r.sigma_min and g.edges[-1] == r.sigma_max
    steps = np.diff(np.log(g.edges))
    np.testing.assert_allclose(steps, steps.mean(), rtol=1e-8)
    assert np.all(g.edges[:-1] < g.centers) and np.all(g.centers < g.edges[1:])
    assert g.widths.sum() == pytest.approx(r.sigma_max - r.sigma_min, rel=1e-12)


def test_grid_equality_by_range_and_k():
    assert build_log_grid(K=16) == build_log_grid(K=16)
    assert build_log_grid(K=16) != build_log_grid(K=17)


# ---------------------------------------------------------------- locate_bin


def test_locate_bin_boundaries():
    g = build_log_grid(SigmaRange(1, 100), 2)
    assert locate_bin(g, 1.0) == 0
    assert locate_bin(g, 100.0) == 1
    assert locate_bin(g, 5.0) == 0
    assert locate_bin(g, 10.0) == 1


@pytest.mark.parametrize("s", [0.5, 100.0001, 0.0, -1.0, math.nan])
def test_locate_bin_out_of_range(s):
    g = build_log_grid(SigmaRange(1, 100), 2)
    with pytest.raises(DomainError):
        locate_bin(g, s)


@given(ranges, st.integers(2, 200), st.floats(0.0, 1.0))
def test_locate_bin_is_cell_membership(r, K, t):
    g = build_log_grid(r, K)
    s = min(r.sigma_max, r.sigma_min * (r.sigma_max / r.sigma_min) ** t)
    k = locate_bin(g, s)
    assert g.edges[k] <= s
    assert s < g.edges[k + 1] or (k == K - 1 and s == r.sigma_max)


def test_locate_bin_every_edge():
    g = build_log_grid(K=128)
    np.testing.assert_array_equal(locate_bin(g, g.edges[:-1]), np.arange(128))


# ---------------------------------------------------------------- integrate


def test_integrate_constants():
    g = build_log_grid(SigmaRange(0.01, 10), 32)
    assert integrate(Profile(g, np.zeros(32))) == 0.0
    assert integrate(Profile(g, np.ones(32))) == pytest.approx(10 - 0.01, rel=1e-13)


def test_integrate_linear_function():
    g = build_log_grid(SigmaRange(1, math.e), 512)
    assert integrate(Profile(g, g.centers)) == pytest.approx((math.e**2 - 1) / 2, rel=1e-3)


def test_cumulative_integral_ends_at_total():
    g = build_log_grid(K=40)
    p = Profile(g, np.sin(np.arange(40)) ** 2)
    nodes, cum = cumulative_integral(p)
    assert nodes[0] == g.sigma_min and nodes[-1] == g.sigma_max
    assert cum[0] == 0.0 and cum[-1] == pytest.approx(integrate(p), rel=1e-14)


def test_profile_validation():
    g = build_log_grid(K=4)
    with pytest.raises(ConfigError):
        Profile(g, np.ones(3))
    with pytest.raises(DegenerateProfileError):
        Profile(g, np.array([1, np.nan, 1, 1]))


# ---------------------------------------------------------------- normalize_to_density


def test_constant_profile_gives_uniform_density():
    g = build_log_grid(SigmaRange(0.5, 4), 16)
    d = normalize_to_density(Profile(g, np.full(16, 3.0)))
    np.testing.assert_allclose(d.density, 1 / 3.5, rtol=1e-13)
    np.testing.assert_allclose(d.cdf, (g.edges - 0.5) / 3.5, atol=1e-14)


def test_single_cell_profile():
    g = build_log_grid(SigmaRange(1, 16), 4)
    d = normalize_to_density(Profile(g, np.array([0, 0, 5.0, 0])))
    np.testing.assert_array_equal(d.cdf, [0, 0, 0, 1, 1])
    assert d.masses[2] == 1.0


def test_gaussian_prior_rate_normalizes():
    from infonoise.oracle import GaussianPrior, gaussian_mmse

    g = build_log_grid(K=128)
    rate = gaussian_mmse(GaussianPrior(1.0, 4), g.centers) / g.centers**3
    d = normalize_to_density(Profile(g, rate))
    assert integrate(d.as_profile()) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("vals", [np.zeros(8), -np.ones(8), np.r_[1.0, -1e-3, np.ones(6)]])
def test_normalize_rejects_degenerate(vals):
    with pytest.raises(DegenerateProfileError):
        normalize_to_density(Profile(build_log_grid(K=8), vals))


@given(positive_profiles())
def test_density_invariants(p):
    d = normalize_to_density(p)
    assert integrate(d.as_profile()) == pytest.approx(1.0, abs=1e-9)
    assert d.cdf[0] == 0.0 and d.cdf[-1] == 1.0
    assert np.all(np.diff(d.cdf) >= 0)


@given(positive_profiles(), st.floats(0.0, 1.0))
def test_inverse_cdf_round_trip(p, t):
    d = normalize_to_density(p)
    g = d.grid
    s = min(g.sigma_max, g.sigma_min * (g.sigma_max / g.sigma_min) ** t)
    k = locate_bin(g, s)
    # the inverse is unique only where the cdf is strictly increasing
    if d.density[k] == 0 or not g.edges[k] < s < g.edges[k + 1]:
        return
    back = inverse_cdf_sample(d, d.cdf_at(s))
    # one ulp of cdf moves sigma by ulp * width / mass inside a light cell
    cond = 4 * np.finfo(float).eps * g.widths[k] / d.masses[k]
    assert abs(back - s) <= 1e-10 * s + cond


# ---------------------------------------------------------------- inverse_cdf_sample


def test_uniform_median():
    g = build_log_grid(SigmaRange(0.5, 4), 16)
    d = normalize_to_density(Profile(g, np.ones(16)))
    assert inverse_cdf_sample(d, 0.5) == pytest.approx(2.25, rel=1e-13)


def test_endpoints():
    d = normalize_to_density(Profile(build_log_grid(K=32), np.arange(1.0, 33.0)))
    assert inverse_cdf_sample(d, 0.0) == 0.002
    assert inverse_cdf_sample(d, 1.0) == 80.0


def test_triangular_density_quartile():
    # density 2 sigma on (0, 1]: cdf sigma^2, so the 0.25 quantile is 0.5
    g = build_log_grid(SigmaRange(1e-6, 1.0), 4000)
    d = normalize_to_density(Profile(g, 2 * g.centers))
    assert inverse_cdf_sample(d, 0.25) == pytest.approx(0.5, rel=1e-4)


@pytest.mark.parametrize("z", [-1e-12, 1.0000001, math.nan])
def test_inverse_cdf_domain(z):
    d = normalize_to_density(Profile(build_log_grid(K=4), np.ones(4)))
    with pytest.raises(DomainError):
        inverse_cdf_sample(d, z)


@given(positive_profiles(), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20))
def test_inverse_cdf_monotone(p, zs):
    d = normalize_to_density(p)
    z = np.sort(np.array(zs))
    s = inverse_cdf_sample(d, z)
    assert np.all(np.diff(s) >= 0)
    assert np.all((s >= d.grid.sigma_min) & (s <= d.grid.sigma_max))


def test_strictly_monotone_where_positive():
    d = normalize_to_density(Profile(build_log_grid(K=16), np.linspace(1, 2, 16)))
    s = inverse_cdf_sample(d, np.linspace(0, 1, 1001))
    assert np.all(np.diff(s) > 0)


def test_ks_statistic_of_draws():
    g = build_log_grid(K=128)
    p = Profile(g, np.exp(-((np.log(g.centers) - np.log(0.7)) ** 2) / 0.3))
    d = normalize_to_density(p)
    x = d.draw(np.random.default_rng(7), 100_000)
    ks = stats.kstest(x, d.cdf_at).statistic
    assert ks < 0.01


# ---------------------------------------------------------------- evaluate_density


def test_evaluate_density_nodes_and_midpoints():
    g = build_log_grid(K=8)
    d = normalize_to_density(Profile(g, np.arange(1.0, 9.0)))
    np.testing.assert_allclose(evaluate_density(d, g.centers), d.density, rtol=1e-14)
    mid = math.sqrt(g.centers[2] * g.centers[3])
    assert evaluate_density(d, mid) == pytest.approx(0.5 * (d.density[2] + d.density[3]), rel=1e-12)
    assert evaluate_density(d, g.sigma_min) == d.density[0]
    assert evaluate_density(d, g.sigma_max) == d.density[-1]


def test_evaluate_uniform():
    g = build_log_grid(SigmaRange(1, 3), 8)
    d = normalize_to_density(Profile(g, np.ones(8)))
    assert evaluate_density(d, 2.2) == pytest.approx(0.5, rel=1e-13)
    with pytest.raises(DomainError):
        evaluate_density(d, 3.5)


# ---------------------------------------------------------------- TabulatedDensity


def test_density_dict_round_trip():
    d = normalize_to_density(Profile(build_log_grid(K=12), np.linspace(1, 3, 12)))
    back = TabulatedDensity.from_dict(d.to_dict())
    np.testing.assert_array_equal(back.density, d.density)
    np.testing.assert_array_equal(back.cdf, d.cdf)
    assert back.grid == d.grid


def test_density_dict_rejects_foreign_edges():
    obj = normalize_to_density(Profile(build_log_grid(K=4), np.ones(4))).to_dict()
    obj["edges"] = [0.002, 0.1, 1.0, 10.0, 80.0]
    with pytest.raises(ConfigError):
        TabulatedDensity.from_dict(obj)


def test_density_rejects_bad_cdf():
    g = build_log_grid(K=2)
    with pytest.raises(DegenerateProfileError):
        TabulatedDensity(g, np.ones(2), np.array([0.0, 0.7, 0.9]))


def test_total_variation():
    g = build_log_grid(K=4)
    a = normalize_to_density(Profile(g, np.array([1.0, 0, 0, 0])))
    b = normalize_to_density(Profile(g, np.array([0, 0, 0, 1.0])))
    assert total_variation(a, b) == 1.0
    assert total_variation(a, a) == 0.0
