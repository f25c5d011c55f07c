"""Adaptive tempered sequential Monte Carlo.

The bridge ``pi_beta(x) ~ prior(x) exp(-beta E(x))`` runs from the prior at
``beta = 0`` to the posterior at ``beta = 1``.  Each stage picks the next
temperature so that the incremental weights keep a Kish ESS of ``rho m``,
resamples multinomially and mutates every particle with one of three kernels:

``RW``
    Gaussian random-walk Metropolis with the weighted particle covariance
    scaled by ``2.38^2 / d``.
``IRMH``
    Independence Metropolis-Hastings from a Gaussian fitted to the weighted
    particles.
``SS``
    Hit-and-run slice sampling on the tempered density, sharing the
    machinery of :mod:`nss.hrss`.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import CovarianceMetric, RngStream, TargetModel, as_generator, estimate_metric
from .hrss import SliceConfig, run_slice_steps

KERNELS = ("RW", "IRMH", "SS")


@dataclass(frozen=True)
class SmcConfig:
    """Tempering and mutation settings.

    ``inner_steps=None`` means ``5 d`` for the Metropolis kernels and ``d``
    for slice sampling; ``rw_scale=None`` means ``2.38^2 / d``.
    """

    m: int = 1000
    ess_target: float = 0.9
    kernel: str = "SS"
    inner_steps: Optional[int] = None
    rw_scale: Optional[float] = None
    max_stages: int = 1000
    width: float = 1.0
    max_stepout: int = 10
    max_shrink: int = 100
    metric_reg: float = 1e-6
    init_budget: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", str(self.kernel).upper())
        if self.m < 2:
            raise ValueError("need m >= 2 particles")
        if not 0.0 < self.ess_target < 1.0:
            raise ValueError("ess_target must lie in (0, 1)")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {KERNELS}")
        if self.inner_steps is not None and self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.rw_scale is not None and not self.rw_scale > 0:
            raise ValueError("rw_scale must be positive")
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")

    def steps_for(self, dim: int) -> int:
        if self.inner_steps is not None:
            return self.inner_steps
        return dim if self.kernel == "SS" else 5 * dim

    def scale_for(self, dim: int) -> float:
        return 2.38 ** 2 / dim if self.rw_scale is None else self.rw_scale


@dataclass
class SmcState:
    particles: np.ndarray
    energies: np.ndarray
    log_priors: np.ndarray
    seed: int
    beta: float = 0.0
    log_z: float = 0.0
    stage: int = 0
    eval_count: int = 0
    betas: list = field(default_factory=lambda: [0.0])
    ess_history: list = field(default_factory=list)
    accept_history: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


def tempered_log_density(log_prior, energy, beta: float) -> np.ndarray:
    """``log_prior - beta * energy``; an infinite energy is zero density at any beta."""
    lp = np.asarray(log_prior, dtype=float)
    en = np.asarray(energy, dtype=float)
    ok = np.isfinite(en) & np.isfinite(lp)
    out = np.full(lp.shape, -np.inf)
    out[ok] = lp[ok] - beta * en[ok]
    return out


def normalized_ess(log_w: np.ndarray) -> float:
    """``1 / sum(wbar^2)`` for normalised weights."""
    lw = log_w - logsumexp(log_w)
    return float(np.exp(-logsumexp(2 * lw)))


def next_temperature(energies, beta_t: float, rho: float, m: int | None = None,
                     tol: float = 1e-10) -> float:
    """Next inverse temperature by bisection on ``ESS(delta) = rho m``."""
    en = np.asarray(energies, dtype=float)
    m = en.size if m is None else m
    if not beta_t < 1.0:
        raise ValueError("beta_t must be below 1")
    if not np.all(np.isfinite(en)):
        raise ValueError("energies must be finite")
    target = rho * m
    # shifting energies leaves normalised weights unchanged and avoids overflow
    en = en - en.min()
    hi = 1.0 - beta_t
    if normalized_ess(-hi * en) >= target:
        return 1.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if normalized_ess(-mid * en) >= target:
            lo = mid
        else:
            hi = mid
    return beta_t + 0.5 * (lo + hi)


def weighted_moments(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and (reliability-corrected) covariance."""
    w = w / w.sum()
    mean = w @ x
    dx = x - mean
    denom = 1.0 - np.dot(w, w)
    cov = (dx * w[:, None]).T @ dx / (denom if denom > 0 else 1.0)
    return mean, np.atleast_2d(cov)


def _regularise(cov: np.ndarray, reg: float) -> np.ndarray:
    d = cov.shape[0]
    scale = float(np.mean(np.diag(cov)))
    if not scale > 0 or not np.isfinite(scale):
        return np.eye(d)
    cov = 0.5 * (cov + cov.T) + reg * scale * np.eye(d)
    if np.linalg.eigvalsh(cov).min() <= 1e-12 * scale:
        return scale * np.eye(d)
    return cov


# ---------------------------------------------------------------------------
# mutation kernels, batched over particles


def rw_batch(x, lp, en, beta, target: TargetModel, cov, p: int, scale: float, stream: RngStream):
    """``p`` random-walk Metropolis steps for every particle; returns acceptance counts."""
    x, lp, en = x.copy(), lp.copy(), en.copy()
    n, d = x.shape
    chol = np.linalg.cholesky(scale * np.asarray(cov, dtype=float))
    cur = tempered_log_density(lp, en, beta)
    acc = np.zeros(n, dtype=int)
    for s in range(p):
        gen = stream.child(s).generator
        z = gen.standard_normal((n, d))
        log_u = np.log(gen.random(n))
        prop = x + z @ chol.T
        plp, pen = target.evaluate(prop)
        new = tempered_log_density(plp, pen, beta)
        ok = log_u < new - cur
        x[ok], lp[ok], en[ok], cur[ok] = prop[ok], plp[ok], pen[ok], new[ok]
        acc += ok
    return x, lp, en, acc, n * p


@dataclass(frozen=True)
class GaussianProposal:
    """Independent Gaussian proposal; the constructor rejects singular covariances."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("proposal covariance must be positive definite") from exc
        if np.min(np.diag(chol)) <= 1e-12 * np.max(np.diag(chol)):
            raise ValueError("proposal covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)

    def sample(self, gen, n: int) -> np.ndarray:
        return self.mean + gen.standard_normal((n, self.mean.size)) @ self.chol.T

    def log_pdf(self, x) -> np.ndarray:
        z = np.linalg.solve(self.chol, (np.atleast_2d(x) - self.mean).T)
        d = self.mean.size
        return (-0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(self.chol)))
                - 0.5 * d * np.log(2 * np.pi))


def irmh_batch(x, lp, en, beta, target: TargetModel, proposal: GaussianProposal, p: int,
               stream: RngStream):
    x, lp, en = x.copy(), lp.copy(), en.copy()
    n = x.shape[0]
    cur = tempered_log_density(lp, en, beta) - proposal.log_pdf(x)
    acc = np.zeros(n, dtype=int)
    for s in range(p):
        gen = stream.child(s).generator
        prop = proposal.sample(gen, n)
        log_u = np.log(gen.random(n))
        plp, pen = target.evaluate(prop)
        new = tempered_log_density(plp, pen, beta) - proposal.log_pdf(prop)
        ok = log_u < new - cur
        x[ok], lp[ok], en[ok], cur[ok] = prop[ok], plp[ok], pen[ok], new[ok]
        acc += ok
    return x, lp, en, acc, n * p


def tempered_logf(target: TargetModel, beta: float):
    def logf(pts, idx):
        lp, en = target.evaluate(pts)
        return tempered_log_density(lp, en, beta), lp, en
    return logf


def ss_batch(x, lp, en, beta, target: TargetModel, metric: CovarianceMetric, cfg: SliceConfig,
             streams, workers: int = 1):
    gens = [as_generator(s) for s in streams]
    res = run_slice_steps(x, lp, en, tempered_logf(target, beta),
                          lambda a, b: tempered_log_density(a, b, beta),
                          metric, cfg, gens, workers)
    return res


def mutate_rw(particle, beta, target: TargetModel, cov, p: int, rng, scale: float | None = None):
    """Single-particle random walk; returns the final point and evaluations used."""
    x = np.atleast_2d(np.asarray(particle, dtype=float))
    lp, en = target.evaluate(x)
    scale = 2.38 ** 2 / x.shape[1] if scale is None else scale
    stream = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2 ** 63)))
    out, _, _, _, evals = rw_batch(x, lp, en, beta, target, cov, p, scale, stream)
    return out[0], evals


def mutate_irmh(particle, beta, target: TargetModel, fit_mean, fit_cov, p: int, rng):
    proposal = GaussianProposal(fit_mean, fit_cov)
    x = np.atleast_2d(np.asarray(particle, dtype=float))
    lp, en = target.evaluate(x)
    stream = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2 ** 63)))
    out, _, _, _, evals = irmh_batch(x, lp, en, beta, target, proposal, p, stream)
    return out[0], evals


def mutate_ss(particle, beta, target: TargetModel, metric: CovarianceMetric, cfg: SliceConfig, rng):
    x = np.atleast_2d(np.asarray(particle, dtype=float))
    lp, en = target.evaluate(x)
    if not np.isfinite(tempered_log_density(lp, en, beta)[0]):
        raise ValueError("start point has zero tempered density")
    res = ss_batch(x, lp, en, beta, target, metric, cfg, [rng])
    return res.x[0], int(res.n_calls[0])


# ---------------------------------------------------------------------------
# outer loop


def smc_init(target: TargetModel, cfg: SmcConfig, seed: int) -> SmcState:
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
    return SmcState(np.vstack(xs)[:m], np.concatenate(ens)[:m], np.concatenate(lps)[:m],
                    seed=int(seed), eval_count=n_drawn)


def smc_stage(state: SmcState, cfg: SmcConfig, target: TargetModel, workers: int = 1) -> SmcState:
    """Reweight to the next temperature, resample and mutate."""
    if not state.beta < 1.0:
        raise ValueError("the run has already reached beta = 1")
    t = state.stage
    m, d = state.m, state.dim
    beta_next = next_temperature(state.energies, state.beta, cfg.ess_target, m)
    delta = beta_next - state.beta
    log_w = -delta * state.energies
    if np.isnan(log_w).any():
        raise FloatingPointError("NaN incremental weights")
    state.log_z += float(logsumexp(log_w) - np.log(m))
    w = np.exp(log_w - log_w.max())
    state.ess_history.append(normalized_ess(log_w))

    # proposal fits use the weighted cloud before resampling
    mean, cov = weighted_moments(state.particles, w)
    cov = _regularise(cov, cfg.metric_reg)

    gen = RngStream(state.seed, ("resample", t)).generator
    idx = gen.choice(m, size=m, replace=True, p=w / w.sum())
    x, lp, en = state.particles[idx], state.log_priors[idx], state.energies[idx]

    p = cfg.steps_for(d)
    if cfg.kernel == "RW":
        x, lp, en, acc, evals = rw_batch(x, lp, en, beta_next, target, cov, p, cfg.scale_for(d),
                                         RngStream(state.seed, ("rw", t)))
        state.accept_history.append(float(acc.sum()) / (m * p))
    elif cfg.kernel == "IRMH":
        x, lp, en, acc, evals = irmh_batch(x, lp, en, beta_next, target, GaussianProposal(mean, cov), p,
                                           RngStream(state.seed, ("irmh", t)))
        state.accept_history.append(float(acc.sum()) / (m * p))
    else:
        metric = CovarianceMetric.from_matrix(cov).inverse()
        scfg = SliceConfig(width=cfg.width, max_stepout=cfg.max_stepout, max_shrink=cfg.max_shrink, steps=p)
        streams = [RngStream(state.seed, ("ss", t, i)) for i in range(m)]
        res = ss_batch(x, lp, en, beta_next, target, metric, scfg, streams, workers)
        x, lp, en = res.x, res.log_prior, res.energy
        evals = int(res.n_calls.sum())
        state.accept_history.append(1.0 - float(res.n_null.sum()) / (m * p))

    state.particles, state.log_priors, state.energies = x, lp, en
    state.eval_count += int(evals)
    state.beta = beta_next
    state.betas.append(beta_next)
    state.stage = t + 1
    return state


@dataclass
class SmcResult:
    state: SmcState
    log_z: float
    stages: int
    wall_time_s: float


def run_smc(target: TargetModel, cfg: SmcConfig, seed: int, workers: int = 1) -> SmcResult:
    t0 = time.perf_counter()
    state = smc_init(target, cfg, seed)
    while state.beta < 1.0 and state.stage < cfg.max_stages:
        smc_stage(state, cfg, target, workers)
    if state.beta < 1.0:
        warnings.warn(f"SMC stopped at beta={state.beta:.4g} after {state.stage} stages")
    return SmcResult(state, state.log_z, state.stage, time.perf_counter() - t0)
