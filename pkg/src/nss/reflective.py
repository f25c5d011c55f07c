"""Gradient-reflection constrained samplers and the evidence comparison.

Three samplers move a point inside ``{x : energy(x) < e_min}`` within the
prior box:

* Galilean Monte Carlo (``GMC``): step forward; if the step lands outside,
  reflect off the gradient taken at the outside point and step again, or
  reverse the velocity if that also lands outside.
* The 2019 variant (``GMC2019``): probes North/East/West/South around the
  current point and reflects off the gradient taken inside.
* Reflective slice sampling (``RSS``): as GMC, but a failed reflection rejects
  the whole trajectory.

All chains of a batch run in lock step.  Each chain draws its velocities from
its own stream, so results do not depend on the batch composition.  Where a
probe leaves the prior box the reflecting normal is the normal of the most
violated box face, since the likelihood gradient says nothing about the box.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .core import RngStream, TargetModel, as_generator
from .hrss import ReplaceResult
from .nested import NsConfig, hrss_kernel, run_nested
from .targets import AlphaLikelihoodSpec, alpha_log_z, alpha_target

SAMPLERS = ("GMC", "GMC2019", "RSS", "SS")


@dataclass(frozen=True)
class ReflectConfig:
    eps: float = 0.1
    l_traj: int = 8
    n_traj: int | None = None  # None means 25 d
    accept_lo: float = 0.25
    accept_hi: float = 0.5
    adapt_factor: float = 1.25
    max_adjust: int = 50
    rss_reject: str = "step"  # or "trajectory": revert to the trajectory start

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.accept_lo < self.accept_hi < 1:
            raise ValueError("need 0 < accept_lo < accept_hi < 1")
        if self.l_traj < 1 or (self.n_traj is not None and self.n_traj < 1):
            raise ValueError("trajectory counts must be >= 1")
        if not self.adapt_factor > 1:
            raise ValueError("adapt_factor must exceed 1")
        if self.rss_reject not in ("trajectory", "step"):
            raise ValueError("rss_reject must be 'trajectory' or 'step'")

    def trajectories(self, dim: int) -> int:
        return 25 * dim if self.n_traj is None else self.n_traj


def reflect(v, grad) -> np.ndarray:
    """Mirror ``v`` in the plane orthogonal to ``grad``; works row-wise on batches."""
    v = np.asarray(v, dtype=float)
    g = np.asarray(grad, dtype=float)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ValueError("zero gradient: reflection normal undefined")
    n = g / norm
    return v - 2 * np.sum(v * n, axis=-1, keepdims=True) * n


class _Probe:
    """Counts constraint probes and gradient calls per chain."""

    def __init__(self, target: TargetModel, e_min, n: int):
        if target.energy_grad is None:
            raise ValueError(f"target {target.name!r} has no energy gradient")
        self.target = target
        self.e_min = np.broadcast_to(np.asarray(e_min, dtype=float), (n,))
        self.evals = np.zeros(n, dtype=int)
        self.grads = np.zeros(n, dtype=int)
        lo, hi = target.bounds if target.bounds is not None else (None, None)
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)

    def inside(self, pts, idx) -> np.ndarray:
        lp, en = self.target.evaluate(pts)
        self.evals[idx] += 1
        return np.isfinite(lp) & (en < self.e_min[idx])

    def normal(self, pts, idx) -> np.ndarray:
        """Reflection normal at ``pts``: box face outside the box, energy gradient inside."""
        g = np.zeros_like(pts)
        out = np.zeros(pts.shape[0], dtype=bool)
        if self.lo is not None:
            viol = np.maximum(self.lo - pts, pts - self.hi)
            out = viol.max(axis=1) > 0
            if out.any():
                j = np.argmax(viol[out], axis=1)
                g[np.flatnonzero(out), j] = 1.0
        inn = ~out
        if inn.any():
            g[inn] = self.target.energy_grad(pts[inn])
            self.grads[idx[inn]] += 1
        return g


def _velocities(gens, n_traj: int, d: int) -> np.ndarray:
    return np.stack([as_generator(g).standard_normal((n_traj, d)) for g in gens], axis=1)


@dataclass
class ChainBatch:
    x: np.ndarray
    evals: np.ndarray
    grads: np.ndarray
    accept: float  # fraction of first probes that landed inside


def gmc_batch(x0, e_min, target: TargetModel, eps, cfg: ReflectConfig, gens) -> ChainBatch:
    """Galilean Monte Carlo for a batch of chains."""
    x = np.array(x0, dtype=float, ndmin=2)
    n, d = x.shape
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (n,))[:, None]
    probe = _Probe(target, e_min, n)
    vel = _velocities(gens, cfg.trajectories(d), d)
    all_idx = np.arange(n)
    n_in = 0
    for v in vel:
        v = v.copy()
        for _ in range(cfg.l_traj):
            x1 = x + eps * v
            in1 = probe.inside(x1, all_idx)
            n_in += int(in1.sum())
            x[in1] = x1[in1]
            out = np.flatnonzero(~in1)
            if out.size:
                vr = reflect(v[out], probe.normal(x1[out], out))
                x2 = x1[out] + eps[out] * vr
                in2 = probe.inside(x2, out)
                ok, bad = out[in2], out[~in2]
                x[ok], v[ok] = x2[in2], vr[in2]
                v[bad] = -v[bad]
    total = n * vel.shape[0] * cfg.l_traj
    return ChainBatch(x, probe.evals, probe.grads, n_in / total)


def gmc2019_batch(x0, e_min, target: TargetModel, eps, cfg: ReflectConfig, gens) -> ChainBatch:
    """Galilean Monte Carlo, 2019 variant, for a batch of chains."""
    x = np.array(x0, dtype=float, ndmin=2)
    n, d = x.shape
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (n,))[:, None]
    probe = _Probe(target, e_min, n)
    vel = _velocities(gens, cfg.trajectories(d), d)
    all_idx = np.arange(n)
    n_in = 0
    for v in vel:
        v = v.copy()
        for _ in range(cfg.l_traj):
            fwd = x + eps * v
            north = probe.inside(fwd, all_idx)
            n_in += int(north.sum())
            x[north] = fwd[north]
            o = np.flatnonzero(~north)
            if o.size == 0:
                continue
            # the gradient is taken inside; a probe beyond the box wall uses the wall normal
            grad = probe.normal(x[o], o)
            lo, hi = probe.lo, probe.hi
            if lo is not None:
                viol = np.maximum(lo - fwd[o], fwd[o] - hi)
                wall = viol.max(axis=1) > 0
                if wall.any():
                    g = np.zeros((int(wall.sum()), d))
                    g[np.arange(g.shape[0]), np.argmax(viol[wall], axis=1)] = 1.0
                    grad[wall] = g
            vr = reflect(v[o], grad)
            east = probe.inside(x[o] + eps[o] * vr, o)
            west = probe.inside(x[o] - eps[o] * vr, o)
            south = probe.inside(x[o] - eps[o] * v[o], o)
            aim_e = south & east & ~west
            aim_w = south & west & ~east
            aim_s = ~(aim_e | aim_w)
            v[o[aim_e]] = vr[aim_e]
            v[o[aim_w]] = -vr[aim_w]
            v[o[aim_s]] = -v[o[aim_s]]
    total = n * vel.shape[0] * cfg.l_traj
    return ChainBatch(x, probe.evals, probe.grads, n_in / total)


def rss_batch(x0, e_min, target: TargetModel, eps, cfg: ReflectConfig, gens) -> ChainBatch:
    """Reflective slice sampling for a batch of chains.

    Accepted steps are committed as they are taken, so with the default
    ``cfg.rss_reject == "step"`` a failed reflection only ends the trajectory
    and the chain keeps its last accepted point.  ``"trajectory"`` instead
    returns the chain to where the trajectory began.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    n, d = x.shape
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (n,))[:, None]
    probe = _Probe(target, e_min, n)
    vel = _velocities(gens, cfg.trajectories(d), d)
    n_in = n_probe = 0
    for v in vel:
        v = v.copy()
        start = x.copy()
        alive = np.ones(n, dtype=bool)
        for _ in range(cfg.l_traj):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            x1 = x[idx] + eps[idx] * v[idx]
            in1 = probe.inside(x1, idx)
            n_in += int(in1.sum())
            n_probe += idx.size
            o = np.flatnonzero(~in1)
            if o.size:
                oi = idx[o]
                vr = reflect(v[oi], probe.normal(x1[o], oi))
                x2 = x1[o] + eps[oi] * vr
                in2 = probe.inside(x2, oi)
                x1[o[in2]] = x2[in2]
                v[oi[in2]] = vr[in2]
                alive[oi[~in2]] = False
            keep = alive[idx]
            x[idx[keep]] = x1[keep]
        if cfg.rss_reject == "trajectory":
            x[~alive] = start[~alive]
    return ChainBatch(x, probe.evals, probe.grads, n_in / max(n_probe, 1))


_BATCH = {"GMC": gmc_batch, "GMC2019": gmc2019_batch, "RSS": rss_batch}


def _single(batch_fn, x0, e_min, target, cfg, rng):
    x0 = np.asarray(x0, dtype=float).ravel()
    res = batch_fn(x0[None], e_min, target, cfg.eps, cfg, [as_generator(rng)])
    return res.x[0], int(res.evals[0])


def gmc_chain(x0, e_min, target: TargetModel, cfg: ReflectConfig, rng):
    return _single(gmc_batch, x0, e_min, target, cfg, rng)


def gmc2019_chain(x0, e_min, target: TargetModel, cfg: ReflectConfig, rng):
    return _single(gmc2019_batch, x0, e_min, target, cfg, rng)


def rss_chain(x0, e_min, target: TargetModel, cfg: ReflectConfig, rng):
    return _single(rss_batch, x0, e_min, target, cfg, rng)


def adjust_eps(eps: float, acceptance: float, cfg: ReflectConfig) -> float:
    """One step of the multiplicative rule; unchanged when inside the band."""
    if acceptance < cfg.accept_lo:
        return eps / cfg.adapt_factor
    if acceptance > cfg.accept_hi:
        return eps * cfg.adapt_factor
    return eps


def tune_eps(sampler: str, x0, e_min, target: TargetModel, cfg: ReflectConfig, rng) -> float:
    """Adjust ``eps`` on short trial runs until the in-bound fraction is in band."""
    fn = _BATCH[sampler.upper()]
    x = np.array(x0, dtype=float, ndmin=2)
    gen = as_generator(rng)
    trial = replace(cfg, n_traj=1)
    eps = cfg.eps
    for _ in range(cfg.max_adjust):
        res = fn(x, e_min, target, eps, trial, gen.spawn(x.shape[0]))
        new = adjust_eps(eps, res.accept, cfg)
        if new == eps:
            return eps
        eps = new
        x = res.x
    warnings.warn("step-size tuning did not reach the target acceptance band")
    return eps


def reflective_kernel(sampler: str, rcfg: ReflectConfig, eps0: float | None = None):
    """NS replacement kernel factory using a reflective sampler.

    The step size starts from ``eps0`` (default: a tenth of the mean live-set
    standard deviation) and is nudged by the multiplicative rule once per
    outer iteration, using the acceptance observed in that iteration.
    """
    fn = _BATCH[sampler.upper()]

    def factory(cfg: NsConfig, target: TargetModel):
        box = {"eps": eps0}

        def kernel(state, x, lp, en, e_min, streams, workers):
            if box["eps"] is None:
                box["eps"] = 0.1 * float(np.mean(np.std(state.live_x, axis=0)))
            gens = [as_generator(s) for s in streams]
            res = fn(x, e_min, target, box["eps"], rcfg, gens)
            box["eps"] = adjust_eps(box["eps"], res.accept, rcfg)
            lp_new, en_new = target.evaluate(res.x)
            z = np.zeros(x.shape[0], dtype=int)
            return ReplaceResult(res.x, lp_new, en_new, res.evals + res.grads, res.evals, z,
                                 res.evals[:, None])

        kernel.eps = box
        return kernel

    return factory


class CompareResult(NamedTuple):
    log_z: float
    geo_std: float
    oracle_log_z: float
    evals: int
    iterations: int


def compare_evidence(sampler_id: str, alpha: float, d: int, ns_cfg: NsConfig | None = None,
                     rcfg: ReflectConfig | None = None, seed: int = 0, workers: int = 1) -> CompareResult:
    """Nested-sampling evidence on the ``L_alpha`` target with a chosen inner sampler."""
    sid = sampler_id.upper()
    if sid not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler_id!r}; choose from {SAMPLERS}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    spec = AlphaLikelihoodSpec(alpha=alpha, d=d)
    target = alpha_target(spec)
    ns_cfg = ns_cfg or NsConfig(m=1000, k=100)
    factory = hrss_kernel if sid == "SS" else reflective_kernel(sid, rcfg or ReflectConfig())
    res = run_nested(target, ns_cfg, seed, kernel_factory=factory, workers=workers)
    return CompareResult(res.estimate.log_z_mean, res.estimate.log_z_std, alpha_log_z(spec),
                         res.state.eval_count, res.iterations)
