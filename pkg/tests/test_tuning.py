import numpy as np
import pytest
from scipy import integrate, optimize, special, stats

from nss import tuning as T


def test_phi_values():
    assert T.phi(0.0) == 0.0
    assert T.phi(1.0) == pytest.approx(2 * np.log(2) - 1, abs=1e-12)
    assert T.phi(1e-6) == pytest.approx(5e-7, rel=0.01)
    with pytest.raises(ValueError):
        T.phi(-0.1)


def test_phi_series_branch_is_continuous():
    u = 1e-4
    direct = ((1 + u) * np.log1p(u) - u) / u
    assert T.phi(u * (1 - 1e-12)) == pytest.approx(direct, rel=1e-9)


def test_expected_cost_value_and_errors():
    assert T.expected_cost(1, 1) == pytest.approx(2 + 2 * (2 * np.log(2) - 1), abs=1e-12)
    with pytest.raises(ValueError):
        T.expected_cost(0, 1)
    with pytest.raises(ValueError):
        T.expected_cost(1, -1)


@pytest.mark.parametrize("c", [0.01, 0.5, 3.0, 1e3])
def test_expected_cost_scale_invariant(c):
    assert T.expected_cost(2.0, 3.0) == pytest.approx(T.expected_cost(2.0 * c, 3.0 * c), rel=1e-12)


@pytest.mark.parametrize("ell", [0.3, 1.0, 10.0])
def test_fixed_optimum_minimises_cost_on_grid(ell):
    grid = np.linspace(0.2, 5, 20001) * ell
    costs = [T.expected_cost(ell, w) for w in grid]
    assert grid[int(np.argmin(costs))] == pytest.approx(T.optimal_width_fixed(ell), rel=1e-3)


def test_fixed_optimum_against_lambert_w():
    # independent closed form u* = -1 - W_{-1}(-e^{-3/2})
    ref = -1 - special.lambertw(-np.exp(-1.5), -1).real
    assert T.optimal_width_fixed(1.0) == pytest.approx(1.357676674, abs=1e-8)
    assert T.optimal_width_fixed(1.0) == pytest.approx(ref, abs=1e-12)
    assert T.optimal_width_fixed(10.0) == pytest.approx(13.57676674, abs=1e-7)
    u = T.u_star()
    assert abs(u - np.log1p(u) - 0.5) < 1e-12


def test_cost_derivative_signs():
    h = 1e-6
    assert T.expected_cost(1, 1 + h) < T.expected_cost(1, 1 - h)
    assert T.expected_cost(1, 2 + h) > T.expected_cost(1, 2 - h)


def test_sqrt_q_mean_and_normalisation():
    assert T.sqrt_q_mean() == pytest.approx(2 * np.sqrt(2 / np.pi), abs=1e-9)
    # E[R] = 1 for R = Q^{1/2} / E[Q^{1/2}]
    assert T.q_expectation(lambda s: np.sqrt(s) / T.SQRT_Q_MEAN) == pytest.approx(1.0, abs=1e-9)
    # the Gamma(3/2, 2) density is normalised: scipy's independent pdf
    ref = integrate.quad(lambda s: stats.gamma(1.5, scale=2).pdf(s) * np.sqrt(s), 0, np.inf)[0]
    assert T.sqrt_q_mean() == pytest.approx(ref, abs=1e-8)


def test_kappa_infinity_value_and_fixed_point():
    k = T.kappa_infinity(1e-6)
    assert k == pytest.approx(1.3035, abs=1e-3)
    tol = 1e-10
    assert abs(T.kappa_fixed_point_residual(T.kappa_infinity(tol))) < 10 * tol


def test_kappa_against_independent_root_finder():
    dist = stats.gamma(1.5, scale=2.0)
    mean = dist.expect(np.sqrt)

    def g(k):
        return k - 0.5 - dist.expect(lambda q: np.sqrt(q) / mean * np.log1p(k * mean / np.sqrt(q)))

    ref = optimize.brentq(g, 1.0, 2.0, xtol=1e-12)
    assert T.kappa_infinity() == pytest.approx(ref, abs=1e-7)


def test_ellipsoid_spec():
    s = T.EllipsoidSpec([1.0, 2.0, 6.0])
    assert s.mu == pytest.approx(3.0, abs=1e-12) and s.dim == 3
    with pytest.raises(ValueError):
        T.EllipsoidSpec([1.0, 0.0])


def test_mean_chord_formula_values():
    s = T.EllipsoidSpec.ball(100)
    assert T.mean_chord_length(s) == pytest.approx(4 * np.sqrt(2 / (100 * np.pi)), rel=1e-12)
    assert T.mean_chord_length(s) == pytest.approx(0.319154, abs=1e-6)
    assert T.optimal_width_ellipsoid(s) == pytest.approx(1.3035 * 0.319154, rel=1e-3)
    r = T.optimal_width_ellipsoid(T.EllipsoidSpec.ball(400)) / T.optimal_width_ellipsoid(s)
    assert r == pytest.approx(0.5, abs=1e-14)


def test_chord_oracle_on_segment():
    # in one dimension every chord through the unit "ball" is [-1, 1]
    c = T.mc_chord_lengths(T.EllipsoidSpec.ball(1), 100, 0)
    np.testing.assert_allclose(c, 2.0)


def test_mc_chord_mean_ball_d100():
    s = T.EllipsoidSpec.ball(100)
    c = T.mc_chord_lengths(s, 100_000, np.random.default_rng(0))
    assert abs(c.mean() / T.mean_chord_length(s) - 1) < 0.05


def test_mc_chord_mean_anisotropic_d200():
    ev = np.r_[np.ones(100), np.full(100, 100.0)]
    s = T.EllipsoidSpec(ev)
    assert s.mu == pytest.approx(50.5)
    c = T.mc_chord_lengths(s, 100_000, np.random.default_rng(1))
    assert abs(c.mean() / T.mean_chord_length(s) - 1) < 0.05


def test_chord_formula_error_shrinks_with_dimension():
    def err(d):
        s = T.EllipsoidSpec.ball(d)
        e = [abs(T.mc_chord_lengths(s, 20_000, seed).mean() / T.mean_chord_length(s) - 1)
             for seed in range(5)]
        return np.mean(e)

    assert err(400) < err(25)


def test_mc_interval_cost_matches_theory():
    gen = np.random.default_rng(2)
    for w in (5.0, 20.0):
        c = T.mc_interval_costs(10.0, w, 100_000, gen)
        assert abs(c.mean() / T.expected_cost(10.0, w) - 1) < 0.02


def test_ball_d16_sweep_minimum_near_formula():
    s = T.EllipsoidSpec.ball(16)
    w = T.optimal_width_ellipsoid(s)
    wmc, _ = T.mc_optimal_width(s, w * np.exp(np.linspace(-0.7, 0.7, 15)), 50_000,
                                np.random.default_rng(3))
    assert abs(wmc / w - 1) < 0.15


def test_cost_std_profile():
    gen = np.random.default_rng(4)
    s = T.EllipsoidSpec.ball(10)
    w = T.optimal_width_ellipsoid(s)
    _, sd = T.cost_std_profile(s, w, 20_000, gen)
    _, sd_wide = T.cost_std_profile(s, 10 * w, 20_000, gen)
    assert 0.5 <= sd <= 2.5
    assert sd_wide > sd
    with pytest.raises(ValueError):
        T.cost_std_profile(s, w, 10, gen)


def test_tune_rows_theory_column():
    rows = T.tune_validate_rows(10.0, [2.0, 5.0], 2000, 0)
    assert [r[1] for r in rows] == [T.expected_cost(10.0, 2.0), T.expected_cost(10.0, 5.0)]
