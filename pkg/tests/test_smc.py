import numpy as np
import pytest
from scipy import stats

from nss.core import CovarianceMetric, RngStream, TargetModel
from nss.hrss import SliceConfig
from nss.smc import (GaussianProposal, SmcConfig, irmh_batch, mutate_irmh, mutate_rw, mutate_ss,
                     next_temperature, normalized_ess, run_smc, rw_batch, smc_init, smc_stage, ss_batch)
from nss.targets import funnel_target, gaussian_target, make_target


def _unit_box(energy, d=1):
    def log_prior(x):
        return np.where(np.all((x >= 0) & (x <= 1), axis=1), 0.0, -np.inf)
    return TargetModel(name="box", dim=d, log_prior=log_prior, energy=energy,
                       prior_sample=lambda g, n: g.random((n, d)))


def test_config_validation():
    with pytest.raises(ValueError):
        SmcConfig(ess_target=1.0)
    with pytest.raises(ValueError):
        SmcConfig(kernel="HMC")
    with pytest.raises(ValueError):
        SmcConfig(inner_steps=0)
    assert SmcConfig(kernel="rw").steps_for(3) == 15
    assert SmcConfig(kernel="ss").steps_for(3) == 3
    assert SmcConfig().scale_for(4) == pytest.approx(2.38 ** 2 / 4)


def test_next_temperature_two_particle_closed_form():
    assert next_temperature([0.0, 1.0], 0.0, 0.9) == pytest.approx(np.log(2), abs=1e-9)


def test_next_temperature_equal_energies():
    assert next_temperature(np.full(10, 3.3), 0.2, 0.9) == 1.0


def test_next_temperature_monotone_in_rho():
    en = np.random.default_rng(0).exponential(5.0, 300)
    betas = [next_temperature(en, 0.1, r) for r in np.linspace(0.05, 0.95, 19)]
    assert np.all(np.diff(betas) <= 0)


def test_next_temperature_hits_target_ess():
    en = np.random.default_rng(1).normal(0, 30, 1000)
    b = next_temperature(en, 0.0, 0.9)
    assert b < 1
    assert normalized_ess(-b * en) == pytest.approx(900, rel=1e-6)


def test_stage_equal_energies_increment():
    target = _unit_box(lambda x: np.full(len(x), 2.5))
    res = run_smc(target, SmcConfig(m=50, kernel="RW", inner_steps=1), seed=0)
    assert res.stages == 1
    assert res.log_z == pytest.approx(-2.5, abs=1e-12)


def test_rw_prior_only_acceptance_is_inside_fraction():
    target = _unit_box(lambda x: np.zeros(len(x)))
    n = 100_000
    x = np.full((n, 1), 0.5)
    _, _, _, acc, _ = rw_batch(x, np.zeros(n), np.zeros(n), 0.0, target, [[1.0]], 1, 1.0, RngStream(0))
    p = 2 * stats.norm.cdf(0.5) - 1
    assert abs(acc.mean() - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_rw_standard_normal_acceptance_band():
    target = gaussian_target([1.0], 50.0)
    x = np.zeros((1, 1))
    _, _, _, acc, n = rw_batch(x, np.full(1, -np.log(100)), np.zeros(1), 1.0, target, [[1.0]],
                                10_000, 2.38 ** 2, RngStream(1))
    assert 0.3 <= acc.sum() / n <= 0.6


def test_rw_never_enters_zero_density():
    target = _unit_box(lambda x: np.where(x[:, 0] > 0.5, np.inf, 0.0))
    x = np.full((2000, 1), 0.25)
    out, _, en, _, _ = rw_batch(x, np.zeros(2000), np.zeros(2000), 0.3, target, [[0.1]], 20, 1.0,
                                RngStream(2))
    assert np.all(out[:, 0] <= 0.5) and np.all(np.isfinite(en))
    pt, evals = mutate_rw([0.25], 1.0, target, [[0.1]], 50, 3)
    assert pt[0] <= 0.5 and evals == 50


def test_irmh_matched_proposal_always_accepts():
    target = gaussian_target([1.0], 50.0)
    x = np.random.default_rng(0).normal(size=(500, 1))
    lp, en = target.evaluate(x)
    _, _, _, acc, n = irmh_batch(x, lp, en, 1.0, target, GaussianProposal([0.0], [[1.0]]), 10, RngStream(4))
    assert acc.sum() == n


def test_irmh_mismatched_stationary_mean():
    target = gaussian_target([1.0], 50.0)
    n = 4000
    x = np.random.default_rng(5).normal(size=(n, 1))
    lp, en = target.evaluate(x)
    out, _, _, acc, tot = irmh_batch(x, lp, en, 1.0, target, GaussianProposal([0.5], [[4.0]]), 20,
                                     RngStream(6))
    assert acc.sum() < tot
    assert abs(out.mean()) < 3 / np.sqrt(n)


def test_irmh_singular_proposal_rejected():
    with pytest.raises(ValueError):
        GaussianProposal([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        mutate_irmh([0.0, 0.0], 1.0, gaussian_target([1.0, 1.0], 5.0), [0, 0], np.zeros((2, 2)), 1, 0)


def test_ss_standard_normal_variance():
    target = gaussian_target([1.0], 50.0)
    n, p = 5000, 20
    x = np.zeros((n, 1))
    lp, en = target.evaluate(x)
    res = ss_batch(x, lp, en, 1.0, target, CovarianceMetric.identity(1), SliceConfig(width=1.0, steps=p),
                   [RngStream(7, (i,)) for i in range(n)])
    assert abs(res.x.var() - 1.0) < 3 * np.sqrt(2 / n)


def test_ss_beta0_matches_box_uniform():
    target = _unit_box(lambda x: np.random.default_rng(0).normal(size=len(x)) * 1e3)
    n = 20_000
    x = np.full((n, 1), 0.5)
    lp, en = target.evaluate(x)
    res = ss_batch(x, lp, en, 0.0, target, CovarianceMetric.identity(1), SliceConfig(width=0.3, steps=3),
                   [RngStream(8, (i,)) for i in range(n)])
    assert stats.kstest(res.x[:, 0], "uniform").pvalue > 1e-3
    with pytest.raises(ValueError):
        mutate_ss([2.0], 0.0, target, CovarianceMetric.identity(1), SliceConfig(), 0)


def test_gaussian_oracle_over_seeds():
    target = gaussian_target([1.0], 50.0)
    vals = np.array([run_smc(target, SmcConfig(m=500, kernel="RW"), seed=s).log_z for s in range(10)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - target.exact_log_z) < 3 * max(se, 1e-3)


def test_ladder_and_ess_properties():
    target = make_target("mog40")
    res = run_smc(target, SmcConfig(m=300, kernel="RW", inner_steps=4), seed=2)
    b = np.asarray(res.state.betas)
    assert b[0] == 0.0 and b[-1] == 1.0 and np.all(np.diff(b) > 0)
    ess = np.asarray(res.state.ess_history[:-1])
    np.testing.assert_allclose(ess, 0.9 * 300, rtol=0.01)


@pytest.mark.parametrize("kernel", ["RW", "IRMH", "SS"])
def test_kernel_moments_on_gaussian(kernel):
    s = np.array([0.5, 2.0])
    target = gaussian_target(s, 20.0)
    res = run_smc(target, SmcConfig(m=2000, kernel=kernel), seed=3)
    x = res.state.particles
    # resampling duplicates particles, so allow a generous effective size
    se = s / np.sqrt(500)
    assert np.all(np.abs(x.mean(0)) < 3 * se)
    np.testing.assert_allclose(x.std(0), s, rtol=0.1)


def test_funnel_ss_is_finite():
    target = funnel_target(10)
    cfg = SmcConfig(m=200, kernel="SS")
    state = smc_init(target, cfg, 0)
    for _ in range(3):
        calls = state.eval_count
        smc_stage(state, cfg, target)
        assert np.all(np.isfinite(state.particles)) and np.all(np.isfinite(state.energies))
        per_step = (state.eval_count - calls) / (cfg.m * cfg.steps_for(10))
        assert per_step <= 2 * cfg.max_stepout + cfg.max_shrink + 2
