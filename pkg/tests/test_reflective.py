from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from nss.nested import NsConfig
from nss.reflective import (ReflectConfig, adjust_eps, compare_evidence, gmc2019_batch, gmc_batch,
                            gmc_chain, reflect, rss_batch, rss_chain, tune_eps)
from nss.targets import gaussian_target, interval_target

# E = |x|^2 / 2 below 1/2 is the unit ball
E_BALL = 0.5


def _ball(d):
    return gaussian_target(np.ones(d), 10.0)


def _first_velocity(seed, d):
    return np.random.default_rng(seed).standard_normal((1, d))[0]


def test_reflect_examples():
    np.testing.assert_array_equal(reflect([1.0, 0.0], [1.0, 0.0]), [-1.0, 0.0])
    np.testing.assert_array_equal(reflect([1.0, 0.0], [0.0, 1.0]), [1.0, 0.0])
    with pytest.raises(ValueError):
        reflect([1.0, 0.0], [0.0, 0.0])


def test_reflect_householder_identities(rng):
    v, g = rng.normal(size=(10_000, 5)), rng.normal(size=(10_000, 5))
    n = g / np.linalg.norm(g, axis=1, keepdims=True)
    r = reflect(v, g)
    np.testing.assert_allclose(np.linalg.norm(r, axis=1), np.linalg.norm(v, axis=1), rtol=1e-12)
    np.testing.assert_allclose(np.sum(r * n, 1), -np.sum(v * n, 1), atol=1e-12)
    np.testing.assert_allclose(reflect(r, g), v, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ReflectConfig(eps=0)
    with pytest.raises(ValueError):
        ReflectConfig(accept_lo=0.6, accept_hi=0.5)
    with pytest.raises(ValueError):
        ReflectConfig(rss_reject="never")
    assert ReflectConfig().trajectories(4) == 100


@pytest.mark.parametrize("fn", [gmc_batch, gmc2019_batch, rss_batch])
def test_missing_gradient_raises(fn):
    with pytest.raises(ValueError, match="gradient"):
        fn(np.full((1, 1), 0.5), 1.0, interval_target(1.0), 0.1, ReflectConfig(), [0])


@pytest.mark.parametrize("fn,allowed", [(gmc_batch, {1, 2}), (gmc2019_batch, {1, 4}), (rss_batch, {1, 2})])
def test_per_step_eval_counts(fn, allowed):
    target = _ball(3)
    cfg = ReflectConfig(l_traj=1, n_traj=1)
    x0 = np.random.default_rng(0).uniform(-0.5, 0.5, (2000, 3)) / np.sqrt(3)
    res = fn(x0, E_BALL, target, 0.8, cfg, list(range(2000)))
    assert set(np.unique(res.evals)) == allowed


@pytest.mark.parametrize("fn", [gmc_batch, gmc2019_batch, rss_batch])
def test_final_points_inside(fn):
    target = _ball(4)
    x0 = np.random.default_rng(1).uniform(-0.4, 0.4, (300, 4))
    res = fn(x0, E_BALL, target, 0.3, ReflectConfig(), list(range(300)))
    assert np.all(np.sum(res.x ** 2, 1) < 1)


def test_gmc_large_step_leaves_position():
    x0 = np.array([0.1, -0.2])
    x, evals = gmc_chain(x0, E_BALL, _ball(2), ReflectConfig(eps=100.0, l_traj=1, n_traj=1), 0)
    np.testing.assert_array_equal(x, x0)
    assert evals == 2


def test_gmc2019_north_branch():
    v = _first_velocity(0, 2)
    eps = 0.01
    res = gmc2019_batch(np.zeros((1, 2)), E_BALL, _ball(2), eps, ReflectConfig(l_traj=1, n_traj=1), [0])
    np.testing.assert_allclose(res.x[0], eps * v, rtol=1e-15)
    assert res.evals[0] == 1


def test_gmc2019_south_branch():
    x0 = np.array([[0.05, 0.0]])
    res = gmc2019_batch(x0, E_BALL, _ball(2), 100.0, ReflectConfig(l_traj=1, n_traj=1), [0])
    np.testing.assert_array_equal(res.x, x0)
    assert res.evals[0] == 4


def test_rss_ballistic_trajectory():
    v = _first_velocity(3, 2)
    eps = 0.01 / np.linalg.norm(v)
    res = rss_batch(np.zeros((1, 2)), E_BALL, _ball(2), eps, ReflectConfig(l_traj=8, n_traj=1), [3])
    np.testing.assert_allclose(res.x[0], 8 * eps * v, atol=1e-15)


def test_rss_reflection_continues():
    # 1-d slice [-1, 1]: a step of 0.15 from 0.9 hits the wall and bounces back
    v = _first_velocity(0, 1)[0]
    s = np.sign(v)
    eps = 0.15 / abs(v)
    res = rss_batch(np.array([[0.9 * s]]), E_BALL, _ball(1), eps, ReflectConfig(l_traj=2, n_traj=1), [0])
    assert res.x[0, 0] == pytest.approx(0.75 * s, abs=1e-12)


def test_rss_failed_reflection_modes():
    # a normal orthogonal to the motion leaves the velocity unchanged, so the
    # reflected probe lands further out and the reflection fails
    v = _first_velocity(0, 2)
    g = np.array([-v[1], v[0]])
    target = replace(_ball(2), energy_grad=lambda x: np.tile(g, (len(x), 1)))
    eps = 0.3 / np.linalg.norm(v)
    unit = v / np.linalg.norm(v)
    step = rss_batch(np.zeros((1, 2)), E_BALL, target, eps, ReflectConfig(l_traj=8, n_traj=1), [0])
    np.testing.assert_allclose(step.x[0], 0.9 * unit, atol=1e-12)
    assert step.evals[0] == 5
    cfg = ReflectConfig(l_traj=8, n_traj=1, rss_reject="trajectory")
    traj = rss_batch(np.zeros((1, 2)), E_BALL, target, eps, cfg, [0])
    np.testing.assert_array_equal(traj.x[0], 0.0)


def test_rss_double_rejection_keeps_position():
    x0 = np.array([0.1, -0.2])
    x, evals = rss_chain(x0, E_BALL, _ball(2), ReflectConfig(eps=100.0, l_traj=8, n_traj=1), 0)
    np.testing.assert_array_equal(x, x0)
    assert evals == 2


def test_gmc_uniform_in_disk():
    n = 100_000
    res = gmc_batch(np.zeros((n, 2)), E_BALL, _ball(2), 0.2, ReflectConfig(), np.arange(n))
    r2 = np.sum(res.x ** 2, 1)
    assert stats.kstest(r2, "uniform").statistic < 0.02


def test_adjust_eps_rule():
    cfg = ReflectConfig()
    assert adjust_eps(1.0, 0.1, cfg) == pytest.approx(1 / 1.25)
    assert adjust_eps(1.0, 0.4, cfg) == 1.0
    assert adjust_eps(1.0, 0.9, cfg) == pytest.approx(1.25)


def test_tune_eps_reaches_band():
    target = _ball(3)
    x0 = np.zeros((200, 3))
    cfg = ReflectConfig(eps=5.0)
    eps = tune_eps("GMC", x0, E_BALL, target, cfg, 0)
    res = gmc_batch(x0, E_BALL, target, eps, ReflectConfig(n_traj=1), np.arange(200))
    assert eps < 5.0 and 0.15 < res.accept < 0.6
    with pytest.warns(UserWarning):
        tune_eps("GMC", x0, E_BALL, target, ReflectConfig(eps=1e3, max_adjust=2), 0)


def test_compare_evidence_slice_and_errors():
    r = compare_evidence("SS", 1.0, 2, ns_cfg=NsConfig(m=300, k=30), seed=0)
    assert abs(r.log_z - r.oracle_log_z) < 3 * r.geo_std
    with pytest.raises(ValueError):
        compare_evidence("HMC", 0.5, 2)
    with pytest.raises(ValueError):
        compare_evidence("SS", 1.5, 2)
