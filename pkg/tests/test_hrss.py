import numpy as np
import pytest
from scipy import stats

from nss.core import CovarianceMetric, RngStream
from nss.hrss import (SliceConfig, constrained_logf, hrss_replace, hrss_replace_batch, slice_step,
                      slice_sweep)
from nss.targets import interval_target, level_set_target
from nss.tuning import expected_cost


def test_config_validation():
    with pytest.raises(ValueError):
        SliceConfig(width=0.0)
    with pytest.raises(ValueError):
        SliceConfig(max_stepout=0)
    with pytest.raises(ValueError):
        SliceConfig(steps=-1)


def test_unit_interval_never_null_and_contained():
    t = interval_target(1.0)
    gen = np.random.default_rng(0)
    for w in (0.1, 1.0, 5.0):
        for _ in range(200):
            r = slice_step([gen.random()], [1.0], 1.0, t, SliceConfig(width=w), gen)
            assert 0.0 <= r.new_point[0] <= 1.0
            assert not r.null_move
            assert r.n_evals == r.n_stepout + r.n_shrink


def test_empty_slice_is_a_null_move():
    t = interval_target(1.0)
    r = slice_step([0.5], [1.0], -1.0, t, SliceConfig(width=1.0), np.random.default_rng(0))
    assert r.null_move and r.new_point[0] == 0.5
    assert r.n_shrink == 100


def test_step_preconditions():
    t = interval_target(1.0)
    with pytest.raises(ValueError):
        slice_step([2.0], [1.0], 1.0, t, SliceConfig(), 0)
    with pytest.raises(ValueError):
        slice_step([0.5], [2.0], 1.0, t, SliceConfig(), 0)


def test_mean_cost_matches_theory_on_interval():
    ell, w, n = 10.0, 13.57677, 100_000
    gen = np.random.default_rng(4)
    t = interval_target(ell)
    sw = slice_sweep(ell * gen.random((n, 1)), np.ones((n, 1)), np.full(n, w), np.zeros(n),
                     constrained_logf(t, 1.0), SliceConfig(width=w), gen)
    assert abs(sw.n_evals.mean() / expected_cost(ell, w) - 1) < 0.02


def test_interval_output_is_uniform():
    ell, n = 10.0, 100_000
    gen = np.random.default_rng(5)
    t = interval_target(ell)
    sw = slice_sweep(np.full((n, 1), 3.0), np.ones((n, 1)), np.full(n, 4.0), np.zeros(n),
                     constrained_logf(t, 1.0), SliceConfig(width=4.0), gen)
    assert stats.kstest(sw.x[:, 0] / ell, "uniform").pvalue > 1e-3


def test_call_counter_matches_instrumented_target():
    ell = 10.0
    base = interval_target(ell)
    count = {"n": 0}

    def counted(x):
        count["n"] += len(x)
        return base.log_prior(x)

    t = type(base)(**{**base.__dict__, "log_prior": counted})
    gen = np.random.default_rng(6)
    total = 0
    for _ in range(300):
        r = slice_step([gen.random() * ell], [1.0], 1.0, t, SliceConfig(width=2.0), gen)
        total += r.n_calls
        # every step adds the two end probes that stop the stepping-out
        assert r.n_calls == r.n_evals + 2
    # one extra call per step validates the start point
    assert count["n"] == total + 300


def test_stepout_cap():
    t = interval_target(1e6)
    r = slice_step([5e5], [1.0], 1.0, t, SliceConfig(width=1.0, max_stepout=10), 0)
    assert r.n_stepout == 20


def test_zero_steps_returns_parent():
    t = level_set_target(np.ones(3))
    x, n = hrss_replace(np.zeros(3), 1.0, t, CovarianceMetric.identity(3),
                        SliceConfig(steps=0), RngStream(0, ("x",)))
    assert np.array_equal(x, np.zeros(3)) and n == 0


def test_replacement_decorrelation_matches_hit_and_run_contraction():
    # one exact hit-and-run step in a ball has E[x' | x] = (1 - 1/d) x
    d, n = 8, 20_000
    t = level_set_target(np.ones(d))
    gen = np.random.default_rng(7)
    from nss.targets import ellipsoid_sample
    x0 = ellipsoid_sample(np.ones(d), gen, n)
    streams = [RngStream(1, ("r", i)) for i in range(n)]
    res = hrss_replace_batch(x0, 1.0, t, CovarianceMetric.identity(d),
                             SliceConfig(width=1.0, steps=d), streams)
    assert np.all(np.sum(res.x ** 2, axis=1) <= 1.0)
    corr = np.mean([np.corrcoef(x0[:, j], res.x[:, j])[0, 1] for j in range(d)])
    assert abs(corr - (1 - 1 / d) ** d) < 0.02


def test_ill_conditioned_level_set_cost_spread():
    # Gaussian level set with condition number 100; whitened directions and width
    d, n = 10, 2000
    scales = np.geomspace(1.0, 10.0, d)
    t = level_set_target(scales)
    from nss.core import estimate_metric
    from nss.targets import ellipsoid_sample
    gen = np.random.default_rng(8)
    x0 = ellipsoid_sample(scales, gen, n)
    metric = estimate_metric(x0).inverse()
    w = 4 * 1.3035 * np.sqrt(2 / (np.pi * d)) / np.sqrt(1 / (d + 2))
    streams = [RngStream(2, ("r", i)) for i in range(n)]
    res = hrss_replace_batch(x0, 1.0, t, metric, SliceConfig(width=w, steps=d), streams)
    per_step_std = res.steps_evals.std(axis=0, ddof=1).mean()
    assert abs(per_step_std - 1.2) <= 0.5


def test_batch_results_independent_of_workers():
    d, n = 3, 17
    t = level_set_target(np.ones(d))
    x0 = np.full((n, d), 0.1)
    args = (x0, 1.0, t, CovarianceMetric.identity(d), SliceConfig(steps=3))
    a = hrss_replace_batch(*args, [RngStream(9, ("r", i)) for i in range(n)], workers=1)
    b = hrss_replace_batch(*args, [RngStream(9, ("r", i)) for i in range(n)], workers=4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.n_calls, b.n_calls)
    # a chain does not depend on its batch companions
    c = hrss_replace_batch(x0[5:6], 1.0, t, CovarianceMetric.identity(d), SliceConfig(steps=3),
                           [RngStream(9, ("r", 5))])
    assert np.array_equal(c.x[0], a.x[5])


def test_constraint_preserved_over_many_calls():
    t = level_set_target(np.array([1.0, 0.1, 2.0]))
    gen = np.random.default_rng(10)
    from nss.targets import ellipsoid_sample
    x0 = ellipsoid_sample(t.bounds[1], gen, 10_000)
    res = hrss_replace_batch(x0, 1.0, t, CovarianceMetric.identity(3), SliceConfig(steps=1),
                             [RngStream(3, ("c", i)) for i in range(10_000)])
    assert np.all(np.isfinite(t.evaluate(res.x)[1]))


def test_long_chain_ball_second_moment():
    d = 5
    t = level_set_target(np.ones(d))
    gen = RngStream(4, ("chain",))
    x = np.zeros(d)
    r2 = []
    cfg = SliceConfig(width=1.0, steps=1)
    for _ in range(20_000):
        x, _ = hrss_replace(x, 1.0, t, CovarianceMetric.identity(d), cfg, gen)
        r2.append(x @ x)
    r2 = np.array(r2[1000:])
    # thin to reduce autocorrelation before forming a standard error
    thin = r2[::10]
    se = thin.std() / np.sqrt(thin.size)
    assert abs(r2.mean() - d / (d + 2)) < 3 * se
