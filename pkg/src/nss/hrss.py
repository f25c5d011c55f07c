"""Hit-and-run slice sampling with linear stepping-out and shrinkage.

The kernel runs many independent chains in lock step: every chain owns its
random stream, and all target evaluations of one sweep phase are issued as a
single batched call.  A chain's trajectory therefore does not depend on which
other chains share its batch.

Two evaluation counts are reported per step:

``n_evals``
    stepping-out expansions plus shrinkage proposals, the quantity whose
    expectation is ``l/w + 1 + 2 phi(w/l)`` (see :mod:`nss.tuning`).
``n_calls``
    target evaluations actually performed.  This adds the probe of each
    initial bracket end that ends the stepping-out on that side.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import CovarianceMetric, RngStream, TargetError, TargetModel, as_generator

# logf(points, chain_idx) -> (log density or -inf, log_prior, energy)
LogDensity = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class SliceConfig:
    """Slice width, loop caps and number of steps per replacement."""

    width: float = 1.0
    max_stepout: int = 10
    max_shrink: int = 100
    steps: int = 1

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("slice width must be positive")
        if self.max_stepout < 1 or self.max_shrink < 1:
            raise ValueError("loop caps must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class SliceStepReport:
    new_point: np.ndarray
    n_evals: int
    n_stepout: int
    n_shrink: int
    null_move: bool
    n_calls: int


@dataclass
class SliceSweep:
    """Per-chain outcome of one batched slice update."""

    x: np.ndarray
    log_prior: np.ndarray
    energy: np.ndarray
    n_stepout: np.ndarray
    n_shrink: np.ndarray
    n_calls: np.ndarray
    null_move: np.ndarray

    @property
    def n_evals(self) -> np.ndarray:
        return self.n_stepout + self.n_shrink


def _draw(gens, idx) -> np.ndarray:
    # a single shared Generator is accepted for Monte Carlo studies
    if isinstance(gens, np.random.Generator):
        return gens.random(len(idx))
    return np.array([gens[i].random() for i in idx])


def slice_sweep(x0, v, width, logf0, logf: LogDensity, cfg: SliceConfig, gens,
                lp0=None, en0=None) -> SliceSweep:
    """One slice update along ``x0 + t v`` for a batch of chains.

    Parameters
    ----------
    x0, v : (n, d) arrays
        Start points and unit directions.
    width : (n,) array
        Initial bracket width per chain, in the units of ``t``.
    logf0 : (n,) array
        Log density of the start points.
    logf : callable
        Batched log density ``logf(points, chain_idx)`` returning the
        density (``-inf`` outside the support or constraint) and the
        underlying log-prior and energy.
    gens : sequence of numpy Generators or a single Generator
        One stream per chain keeps each chain independent of its batch; a
        shared Generator is faster but ties draws to the batch composition.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    width = np.broadcast_to(np.asarray(width, dtype=float), (n,)).copy()
    chains = np.arange(n)

    height = np.asarray(logf0, dtype=float) + np.log(_draw(gens, chains))
    left = -width * _draw(gens, chains)
    right = left + width

    n_left = np.zeros(n, dtype=int)
    n_right = np.zeros(n, dtype=int)
    calls = np.zeros(n, dtype=int)
    act_l = np.ones(n, dtype=bool)
    act_r = np.ones(n, dtype=bool)
    while True:
        act_l &= n_left < cfg.max_stepout
        act_r &= n_right < cfg.max_stepout
        il = np.flatnonzero(act_l)
        ir = np.flatnonzero(act_r)
        if il.size == 0 and ir.size == 0:
            break
        idx = np.concatenate([il, ir])
        t = np.concatenate([left[il], right[ir]])
        pts = x0[idx] + t[:, None] * v[idx]
        val = logf(pts, idx)[0]
        inside = val > height[idx]
        np.add.at(calls, idx, 1)  # a chain can appear twice, once per side
        in_l, in_r = inside[: il.size], inside[il.size:]
        left[il[in_l]] -= width[il[in_l]]
        n_left[il[in_l]] += 1
        act_l[il[~in_l]] = False
        right[ir[in_r]] += width[ir[in_r]]
        n_right[ir[in_r]] += 1
        act_r[ir[~in_r]] = False

    x_new = x0.copy()
    lp_new = np.full(n, np.nan) if lp0 is None else np.array(lp0, dtype=float)
    en_new = np.full(n, np.nan) if en0 is None else np.array(en0, dtype=float)
    n_shrink = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for _ in range(cfg.max_shrink):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        t = left[idx] + (right[idx] - left[idx]) * _draw(gens, idx)
        pts = x0[idx] + t[:, None] * v[idx]
        val, lp, en = logf(pts, idx)
        ok = val > height[idx]
        calls[idx] += 1
        n_shrink[idx] += 1
        acc = idx[ok]
        x_new[acc] = pts[ok]
        lp_new[acc] = lp[ok]
        en_new[acc] = en[ok]
        active[acc] = False
        rej = ~ok
        neg = rej & (t < 0)
        pos = rej & (t >= 0)
        left[idx[neg]] = t[neg]
        right[idx[pos]] = t[pos]
    return SliceSweep(x_new, lp_new, en_new, n_left + n_right, n_shrink, calls, active.copy())


def constrained_logf(target: TargetModel, e_min) -> LogDensity:
    """Log density of ``prior * 1{energy < e_min}``; ``e_min`` may be per chain."""
    e_min = np.asarray(e_min, dtype=float)

    def logf(pts, idx):
        lp, en = target.evaluate(pts)
        lim = e_min[idx] if e_min.ndim else e_min
        return np.where(en < lim, lp, -np.inf), lp, en

    return logf


def slice_step(x, v, e_min: float, target: TargetModel, cfg: SliceConfig, rng) -> SliceStepReport:
    """One hit-and-run slice step targeting ``prior * 1{energy < e_min}``.

    An infeasible threshold is not an error: the shrinkage loop runs to its cap
    and the step is reported as a null move.
    """
    x = np.asarray(x, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("direction must have unit norm")
    lp0, en0 = target.evaluate(x[None])
    if not np.isfinite(lp0[0]):
        raise ValueError("start point lies outside the prior support")
    logf0 = np.where(en0 < e_min, lp0, -np.inf)
    if not np.isfinite(logf0[0]):
        # empty slice: every probe is rejected and shrinkage exhausts its cap
        logf0 = lp0
    sw = slice_sweep(x[None], v[None], np.array([cfg.width]), logf0,
                     constrained_logf(target, e_min), cfg, [as_generator(rng)], lp0, en0)
    return SliceStepReport(
        new_point=sw.x[0],
        n_evals=int(sw.n_evals[0]),
        n_stepout=int(sw.n_stepout[0]),
        n_shrink=int(sw.n_shrink[0]),
        null_move=bool(sw.null_move[0]),
        n_calls=int(sw.n_calls[0]),
    )


@dataclass
class ReplaceResult:
    x: np.ndarray
    log_prior: np.ndarray
    energy: np.ndarray
    n_calls: np.ndarray
    n_evals: np.ndarray
    n_null: np.ndarray
    steps_evals: np.ndarray  # (n, p) per-step n_evals


def _draw_directions(metric: CovarianceMetric, gens, idx) -> np.ndarray:
    d = metric.dim
    out = np.empty((len(idx), d))
    for j, i in enumerate(idx):
        while True:
            z = gens[i].standard_normal(d)
            dt = (metric.factor * z).sum(axis=1)
            norm = np.sqrt(np.dot(dt, dt))
            if norm > 0:
                out[j] = dt / norm
                break
    return out


def _replace_chunk(x, lp, en, logf, level, metric, cfg, gens) -> ReplaceResult:
    n = x.shape[0]
    calls = np.zeros(n, dtype=int)
    per_step = np.zeros((n, cfg.steps), dtype=int)
    nulls = np.zeros(n, dtype=int)
    chains = np.arange(n)
    for s in range(cfg.steps):
        v = _draw_directions(metric, gens, chains)
        width = cfg.width * metric.width_scale(v)
        sw = slice_sweep(x, v, width, level(lp, en), logf, cfg, gens, lp, en)
        x, lp, en = sw.x, sw.log_prior, sw.energy
        calls += sw.n_calls
        per_step[:, s] = sw.n_evals
        nulls += sw.null_move
    return ReplaceResult(x, lp, en, calls, per_step.sum(axis=1), nulls, per_step)


def run_slice_steps(x, lp, en, logf: LogDensity, level, metric: CovarianceMetric, cfg: SliceConfig,
                    gens: Sequence, workers: int = 1) -> ReplaceResult:
    """``cfg.steps`` HRSS steps per chain on an arbitrary batched log density.

    ``level(lp, en)`` gives the log density at the current points and
    ``logf`` is called with global chain indices, so per-chain parameters
    survive the split into worker chunks.
    """
    n = x.shape[0]
    if cfg.steps == 0 or n == 0:
        z = np.zeros(n, dtype=int)
        return ReplaceResult(x.copy(), lp.copy(), en.copy(), z, z.copy(), z.copy(),
                             np.zeros((n, 0), dtype=int))
    if workers <= 1 or n < 2:
        return _replace_chunk(x, lp, en, logf, level, metric, cfg, gens)
    chunks = [c for c in np.array_split(np.arange(n), workers) if c.size]

    def run(c):
        def local(pts, idx):
            return logf(pts, c[idx])
        return _replace_chunk(x[c], lp[c], en[c], local, level, metric, cfg, [gens[i] for i in c])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return ReplaceResult(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in ("x", "log_prior", "energy", "n_calls", "n_evals",
                                     "n_null", "steps_evals")))


def hrss_replace_batch(parents, e_min, target: TargetModel, metric: CovarianceMetric,
                       cfg: SliceConfig, streams: Sequence, log_prior=None, energy=None,
                       workers: int = 1) -> ReplaceResult:
    """Run ``cfg.steps`` HRSS steps from each parent under ``energy < e_min``.

    ``streams`` holds one :class:`RngStream` (or Generator) per parent.
    Chunking over ``workers`` threads does not change any chain's output.
    """
    x = np.atleast_2d(np.asarray(parents, dtype=float))
    n = x.shape[0]
    if log_prior is None or energy is None:
        log_prior, energy = target.evaluate(x)
    lp = np.asarray(log_prior, dtype=float)
    en = np.asarray(energy, dtype=float)
    e_min = np.broadcast_to(np.asarray(e_min, dtype=float), (n,)).copy()
    if not (np.all(np.isfinite(lp)) and np.all(en < e_min)):
        raise ValueError("every parent must satisfy the constraint")
    gens = [as_generator(s) for s in streams]
    if len(gens) != n:
        raise ValueError("need one random stream per parent")
    return run_slice_steps(x, lp, en, constrained_logf(target, e_min), _prior_level,
                           metric, cfg, gens, workers)


def _prior_level(lp, en):
    return lp


def hrss_replace(parent, e_min: float, target: TargetModel, metric: CovarianceMetric,
                 cfg: SliceConfig, rng) -> tuple[np.ndarray, int]:
    """Single-parent HRSS replacement; returns the new point and target calls used."""
    parent = np.asarray(parent, dtype=float).ravel()
    res = hrss_replace_batch(parent[None], e_min, target, metric, cfg, [rng])
    return res.x[0], int(res.n_calls[0])


__all__ = [
    "SliceConfig", "SliceStepReport", "SliceSweep", "ReplaceResult", "slice_sweep",
    "slice_step", "constrained_logf", "run_slice_steps", "hrss_replace", "hrss_replace_batch", "TargetError",
    "RngStream",
]
