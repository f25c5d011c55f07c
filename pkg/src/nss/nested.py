"""Batched nested sampling with a pluggable constrained replacement kernel.

Each outer iteration removes the ``k`` highest-energy live points at once.  For
the volume bookkeeping the batch is unrolled into ``k`` single deaths with
effective live counts ``m, m-1, ..., m-k+1``, so the usual one-at-a-time
shrinkage statistics apply unchanged.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .core import CovarianceMetric, RngStream, TargetModel, as_generator, estimate_metric
from .hrss import ReplaceResult, SliceConfig, hrss_replace_batch
from .metrics import kish_ess_log


@dataclass(frozen=True)
class NsConfig:
    """Outer-loop settings.

    ``steps=None`` runs ``d`` slice steps per replacement.  The slice width is
    given in whitened units along each direction.
    """

    m: int = 1000
    k: int = 100
    steps: Optional[int] = None
    width: float = 1.0
    max_stepout: int = 10
    max_shrink: int = 100
    term_threshold: float = 3.0
    metric_reg: float = 1e-6
    shrink_sims: int = 100
    beta: float = 1.0
    max_iter: int = 100_000
    init_budget: Optional[int] = None
    flush_live: bool = True

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need m >= 2 live points")
        if not 1 <= self.k < self.m:
            raise ValueError("k must satisfy 1 <= k < m")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not self.term_threshold > 0:
            raise ValueError("term_threshold must be positive")
        if self.shrink_sims < 2:
            raise ValueError("shrink_sims must be >= 2")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.metric_reg < 0:
            raise ValueError("metric_reg must be nonnegative")

    def slice_config(self, dim: int) -> SliceConfig:
        return SliceConfig(width=self.width, max_stepout=self.max_stepout,
                           max_shrink=self.max_shrink,
                           steps=dim if self.steps is None else self.steps)


@dataclass(frozen=True)
class DeadRecord:
    energy: float
    n_live: int
    birth_energy: float


@dataclass
class NsState:
    """Live set, dead records and running bookkeeping of one run."""

    live_x: np.ndarray
    live_log_prior: np.ndarray
    live_energy: np.ndarray
    live_birth: np.ndarray
    metric: CovarianceMetric
    seed: int
    dead_energy: list = field(default_factory=list)
    dead_n_live: list = field(default_factory=list)
    dead_birth: list = field(default_factory=list)
    dead_x: list = field(default_factory=list)
    iteration: int = 0
    eval_count: int = 0
    n_null: int = 0
    init_rejections: int = 0
    # running deterministic quadrature: log X after the last death and the
    # log of the accumulated dead-point evidence at beta
    log_x: float = 0.0
    log_z_dead: float = -np.inf

    @property
    def m(self) -> int:
        return self.live_x.shape[0]

    @property
    def dim(self) -> int:
        return self.live_x.shape[1]

    @property
    def n_dead(self) -> int:
        return len(self.dead_energy)

    @property
    def dead(self) -> list[DeadRecord]:
        return [DeadRecord(float(e), int(n), float(b))
                for e, n, b in zip(self.dead_energy, self.dead_n_live, self.dead_birth)]

    def dead_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.dead_energy, dtype=float), np.asarray(self.dead_n_live, dtype=int)

    def dead_points(self) -> np.ndarray:
        if not self.dead_x:
            return np.empty((0, self.dim))
        return np.vstack(self.dead_x)


@dataclass
class EvidenceEstimate:
    log_z_samples: np.ndarray
    log_z_mean: float
    log_z_std: float
    log_weights: np.ndarray
    weights: np.ndarray
    ess: float


def _record_deaths(state: NsState, idx: np.ndarray, beta: float):
    """Append live points ``idx`` (in decreasing-energy order) as unrolled deaths."""
    m = state.m
    en = state.live_energy[idx]
    n_live = m - np.arange(idx.size)
    # rectangle quadrature on the mean log-volume, as used by the stopping rule
    log_x_prev = state.log_x + np.concatenate([[0.0], -np.cumsum(1.0 / n_live[:-1])])
    log_x_new = log_x_prev - 1.0 / n_live
    log_dx = log_x_prev + np.log(-np.expm1(-1.0 / n_live))
    state.log_z_dead = float(logsumexp(np.concatenate([[state.log_z_dead], -beta * en + log_dx])))
    state.log_x = float(log_x_new[-1])
    state.dead_energy.extend(en.tolist())
    state.dead_n_live.extend(n_live.tolist())
    state.dead_birth.extend(state.live_birth[idx].tolist())
    state.dead_x.append(state.live_x[idx].copy())


def _live_metric(x: np.ndarray, reg: float) -> CovarianceMetric:
    # directions follow N(0, cov): the estimated covariance is the inverse metric
    return estimate_metric(x, reg).inverse()


def ns_init(target: TargetModel, cfg: NsConfig, seed: int) -> NsState:
    """Draw ``m`` prior points with finite energy by rejection."""
    m = cfg.m
    budget = cfg.init_budget if cfg.init_budget is not None else 100 * m
    gen = RngStream(seed, ("init",)).generator
    xs, lps, ens = [], [], []
    n_acc = n_drawn = 0
    while n_acc < m:
        if n_drawn >= budget:
            raise RuntimeError("prior support mismatch: initial rejection budget exhausted")
        batch = min(m, budget - n_drawn)
        x = np.atleast_2d(target.prior_sample(gen, batch))
        lp, en = target.evaluate(x)
        n_drawn += batch
        ok = np.isfinite(lp) & np.isfinite(en)
        xs.append(x[ok])
        lps.append(lp[ok])
        ens.append(en[ok])
        n_acc += int(ok.sum())
    x = np.vstack(xs)[:m]
    lp = np.concatenate(lps)[:m]
    en = np.concatenate(ens)[:m]
    return NsState(
        live_x=x, live_log_prior=lp, live_energy=en, live_birth=np.full(m, np.inf),
        metric=_live_metric(x, cfg.metric_reg), seed=int(seed), eval_count=n_drawn,
        init_rejections=n_drawn - n_acc,
    )


# kernel(state, parents_x, parents_lp, parents_en, e_min, streams, workers) -> ReplaceResult
ReplacementKernel = Callable[..., ReplaceResult]


def hrss_kernel(cfg: NsConfig, target: TargetModel) -> ReplacementKernel:
    """Default replacement: ``p`` HRSS steps with the live-set metric."""
    scfg = cfg.slice_config(target.dim)

    def kernel(state, x, lp, en, e_min, streams, workers):
        return hrss_replace_batch(x, e_min, target, state.metric, scfg, streams, lp, en, workers)

    return kernel


def ns_step(state: NsState, cfg: NsConfig, target: TargetModel,
            kernel: ReplacementKernel | None = None, workers: int = 1) -> NsState:
    """One outer iteration: record ``k`` deaths, resample parents and replace."""
    m, k = cfg.m, cfg.k
    if state.m != m:
        raise ValueError("live set size does not match the configuration")
    kernel = kernel or hrss_kernel(cfg, target)
    it = state.iteration
    order = np.argsort(-state.live_energy, kind="stable")
    worst, survivors = order[:k], order[k:]
    e_batch = float(state.live_energy[worst[-1]])
    _record_deaths(state, worst, cfg.beta)

    pick = RngStream(state.seed, ("resample", it)).generator.integers(0, survivors.size, size=k)
    parents = survivors[pick]
    px = state.live_x[parents]
    plp = state.live_log_prior[parents]
    pen = state.live_energy[parents]
    # parents tied with the threshold cannot move under a strict constraint
    movable = pen < e_batch
    new_x, new_lp, new_en = px.copy(), plp.copy(), pen.copy()
    if movable.any():
        mv = np.flatnonzero(movable)
        streams = [RngStream(state.seed, ("ns", it, int(j))) for j in mv]
        res = kernel(state, px[mv], plp[mv], pen[mv], e_batch, streams, workers)
        new_x[mv], new_lp[mv], new_en[mv] = res.x, res.log_prior, res.energy
        state.eval_count += int(np.sum(res.n_calls))
        state.n_null += int(np.sum(res.n_null))
    state.n_null += int(np.sum(~movable))

    state.live_x[worst] = new_x
    state.live_log_prior[worst] = new_lp
    state.live_energy[worst] = new_en
    state.live_birth[worst] = e_batch
    state.metric = _live_metric(state.live_x, cfg.metric_reg)
    state.iteration = it + 1
    return state


def log_remaining_bound(state: NsState, beta: float = 1.0) -> float:
    """``-beta * E_best + log X_hat`` with the mean log-volume ``X_hat``."""
    return float(-beta * state.live_energy.min() + state.log_x)


def should_terminate(state: NsState, cfg: NsConfig) -> bool:
    if state.n_dead == 0:
        return False
    lz_live = log_remaining_bound(state, cfg.beta)
    total = np.logaddexp(state.log_z_dead, lz_live)
    return bool(lz_live - total < -cfg.term_threshold)


def ns_finalize(state: NsState, cfg: NsConfig) -> NsState:
    """Record the remaining live points as deaths with live counts ``m, ..., 1``."""
    order = np.argsort(-state.live_energy, kind="stable")
    _record_deaths(state, order, cfg.beta)
    return state


def simulate_log_volumes(n_live, R: int, rng) -> np.ndarray:
    """``(R, N)`` simulated ``log X_i`` with ``Delta log X_i = log(s) / n_live_i``."""
    n_live = np.asarray(n_live, dtype=float)
    gen = as_generator(rng)
    log_s = np.log(gen.random((R, n_live.size)))
    return np.cumsum(log_s / n_live, axis=1)


def simulate_volumes(dead, R: int, rng) -> np.ndarray:
    """``(R, N)`` simulated prior volumes for the dead records, in death order."""
    n_live = [d.n_live for d in dead] if dead and isinstance(dead[0], DeadRecord) else dead
    return np.exp(simulate_log_volumes(n_live, R, rng))


def log_trapezoid_masses(log_x: np.ndarray) -> np.ndarray:
    """``log((X_{i-1} - X_{i+1}) / 2)`` with ``X_0 = 1`` and ``X_{N+1} = 0``."""
    r = log_x.shape[0]
    prev = np.concatenate([np.zeros((r, 1)), log_x[:, :-1]], axis=1)
    nxt = np.concatenate([log_x[:, 1:], np.full((r, 1), -np.inf)], axis=1)
    return prev + np.log1p(-np.exp(nxt - prev)) - np.log(2.0)


def evidence(dead_energy, dead_n_live, beta: float = 1.0, R: int = 100, rng=0) -> EvidenceEstimate:
    """Evidence at inverse temperature ``beta`` from simulated shrinkage.

    Statistics are taken over the ``R`` replicate values of ``log Z``; the
    posterior weight of each dead point is the geometric mean of its replicate
    weights.
    """
    en = np.asarray(dead_energy, dtype=float)
    if en.size == 0:
        raise ValueError("evidence needs at least one dead record")
    log_x = simulate_log_volumes(dead_n_live, R, rng)
    log_w = log_trapezoid_masses(log_x)
    if beta != 0:
        log_w = log_w - beta * en[None, :]
    log_z = logsumexp(log_w, axis=1)
    mean_lw = log_w.mean(axis=0)
    w = np.exp(mean_lw - logsumexp(mean_lw))
    return EvidenceEstimate(
        log_z_samples=log_z,
        log_z_mean=float(log_z.mean()),
        log_z_std=float(log_z.std(ddof=1)),
        log_weights=mean_lw,
        weights=w,
        ess=kish_ess_log(mean_lw),
    )


def state_evidence(state: NsState, cfg: NsConfig, beta: float | None = None) -> EvidenceEstimate:
    en, nl = state.dead_arrays()
    gen = RngStream(state.seed, ("shrinkage",)).generator
    return evidence(en, nl, cfg.beta if beta is None else beta, cfg.shrink_sims, gen)


def posterior_resample(points, weights, n: int, rng) -> np.ndarray:
    """Multinomial resampling of dead points in proportion to ``weights``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float)
    if n < 1:
        raise ValueError("n must be >= 1")
    if w.shape[0] != pts.shape[0]:
        raise ValueError("one weight per point is required")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    gen = as_generator(rng)
    idx = gen.choice(pts.shape[0], size=n, replace=True, p=w / w.sum())
    return pts[idx]


@dataclass
class NsResult:
    state: NsState
    estimate: EvidenceEstimate
    iterations: int
    wall_time_s: float
    terminated: bool


def run_nested(target: TargetModel, cfg: NsConfig, seed: int, kernel: ReplacementKernel | None = None,
               workers: int = 1, kernel_factory=None) -> NsResult:
    """Run to termination (or ``max_iter``) and estimate the evidence.

    ``kernel_factory(cfg, target)`` may build a replacement kernel instead of
    passing one directly.
    """
    t0 = time.perf_counter()
    state = ns_init(target, cfg, seed)
    if kernel is None:
        kernel = (kernel_factory or hrss_kernel)(cfg, target)
    done = False
    while state.iteration < cfg.max_iter:
        ns_step(state, cfg, target, kernel, workers)
        if should_terminate(state, cfg):
            done = True
            break
    if cfg.flush_live:
        ns_finalize(state, cfg)
    est = state_evidence(state, cfg)
    return NsResult(state, est, state.iteration, time.perf_counter() - t0, done)


# ---------------------------------------------------------------------------
# artifacts


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def _json_value(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = asdict(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj.tolist() if isinstance(obj, np.ndarray) else obj)
        if not seq:
            return "[]"
        return "[" + ", ".join(_json_value(v, indent, level + 1) for v in seq) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            return "null"
        return fmt_float(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _json_value(obj, indent, 0) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps_json(obj))


def write_dead_csv(path, state: NsState):
    x = state.dead_points()
    header = ["index", "energy", "n_live", "birth_energy"] + [f"x{j}" for j in range(state.dim)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i, (e, n, b) in enumerate(zip(state.dead_energy, state.dead_n_live, state.dead_birth)):
            row = [str(i), fmt_float(e), str(int(n)), fmt_float(b)] + [fmt_float(v) for v in x[i]]
            fh.write(",".join(row) + "\n")


def write_samples_csv(path, samples):
    samples = np.atleast_2d(samples)
    with open(path, "w") as fh:
        fh.write(",".join(f"x{j}" for j in range(samples.shape[1])) + "\n")
        for row in samples:
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


def read_samples_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data
