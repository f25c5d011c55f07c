"""Cost model and optimal slice widths for hit-and-run slice sampling.

The closed forms live next to Monte Carlo validators that simulate the
sampler directly, so every formula can be checked against the kernel in
:mod:`nss.hrss`.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .core import as_generator
from .hrss import SliceConfig, constrained_logf, slice_sweep
from .targets import ellipsoid_sample, interval_target, level_set_target

# Q ~ Gamma(shape 3/2, scale 2) is the limiting law of the squared, dimension
# scaled chord length in a ball.
Q_SHAPE = 1.5
Q_SCALE = 2.0
SQRT_Q_MEAN = 2.0 * np.sqrt(2.0 / np.pi)


def phi(u: float) -> float:
    """``((1 + u) ln(1 + u) - u) / u`` with ``phi(0) = 0``."""
    u = float(u)
    if u < 0:
        raise ValueError("phi is defined for u >= 0")
    if u == 0.0:
        return 0.0
    if u < 1e-4:
        return u / 2 - u * u / 6 + u ** 3 / 12
    return ((1 + u) * np.log1p(u) - u) / u


def expected_cost(ell: float, w: float) -> float:
    """Expected expansions plus shrinkage proposals for a slice of length ``ell``."""
    if not (ell > 0 and w > 0):
        raise ValueError("ell and w must be positive")
    return ell / w + 1.0 + 2.0 * phi(w / ell)


def _ustar_residual(u):
    return u - np.log1p(u) - 0.5


@functools.lru_cache(maxsize=None)
def _solve_ustar() -> float:
    lo, hi = 1.0, 2.0
    u = 1.5
    for _ in range(100):
        f = _ustar_residual(u)
        if abs(f) < 1e-15:
            break
        if f > 0:
            hi = u
        else:
            lo = u
        step = f / (u / (1 + u))
        u_new = u - step
        if not lo < u_new < hi:
            u_new = 0.5 * (lo + hi)
        if abs(u_new - u) < 1e-16:
            u = u_new
            break
        u = u_new
    return u


def optimal_width_fixed(ell: float) -> float:
    """Minimiser ``u* ell`` of :func:`expected_cost` for a fixed slice length."""
    if not ell > 0:
        raise ValueError("ell must be positive")
    return _solve_ustar() * ell


def u_star() -> float:
    return _solve_ustar()


def _gamma_pdf(s):
    return s ** (Q_SHAPE - 1) * np.exp(-s / Q_SCALE) / (special.gamma(Q_SHAPE) * Q_SCALE ** Q_SHAPE)


def q_expectation(fn, upper: float = 40 * Q_SCALE) -> float:
    """``E[fn(Q)]`` by adaptive Gauss-Kronrod on ``[0, upper]``.

    The neglected tail carries probability below ``1e-15`` for the default
    cut and bounded integrands.
    """
    val, _ = integrate.quad(lambda s: fn(s) * _gamma_pdf(s), 0.0, upper,
                            epsabs=1e-14, epsrel=1e-13, limit=400, points=[1.0, 5.0, 20.0])
    return val


def sqrt_q_mean() -> float:
    """Quadrature value of ``E[Q^{1/2}]``; exact value ``2 sqrt(2/pi)``."""
    return q_expectation(np.sqrt)


def _kappa_map(kappa: float) -> float:
    c = kappa * SQRT_Q_MEAN
    inner = q_expectation(lambda s: np.sqrt(s) * np.log1p(c / np.sqrt(s)) if s > 0 else 0.0)
    return 0.5 + inner / SQRT_Q_MEAN


def kappa_fixed_point_residual(kappa: float) -> float:
    return kappa - _kappa_map(kappa)


@functools.lru_cache(maxsize=None)
def kappa_infinity(tol: float = 1e-10) -> float:
    """Fixed point of ``k = 1/2 + E[R ln(1 + k/R)]`` with ``R = Q^{1/2}/E[Q^{1/2}]``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    k = 1.0
    for _ in range(10_000):
        k_new = _kappa_map(k)
        if abs(k_new - k) < tol:
            return k_new
        k = k_new
    raise RuntimeError("kappa fixed-point iteration did not converge")


@dataclass(frozen=True)
class EllipsoidSpec:
    """Ellipsoid ``{x : x^T A x <= 1}`` with diagonal ``A = diag(eigenvalues)``."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        if ev.ndim != 1 or ev.size == 0 or not np.all((ev > 0) & np.isfinite(ev)):
            raise ValueError("eigenvalues must be positive and finite")
        object.__setattr__(self, "eigenvalues", ev)

    @classmethod
    def ball(cls, dim: int, radius: float = 1.0) -> "EllipsoidSpec":
        return cls(np.full(dim, radius ** -2.0))

    @classmethod
    def from_semi_axes(cls, semi_axes) -> "EllipsoidSpec":
        return cls(np.asarray(semi_axes, dtype=float) ** -2.0)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def mu(self) -> float:
        return float(np.mean(self.eigenvalues))

    @property
    def semi_axes(self) -> np.ndarray:
        return self.eigenvalues ** -0.5


def mean_chord_length(spec: EllipsoidSpec) -> float:
    """Leading-order mean chord ``4 sqrt(2 / (pi mu d))``."""
    return 4.0 * np.sqrt(2.0 / (np.pi * spec.mu * spec.dim))


def optimal_width_ellipsoid(spec: EllipsoidSpec) -> float:
    return kappa_infinity() * mean_chord_length(spec)


def _unit_directions(gen, n, d):
    v = gen.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def mc_chord_lengths(spec: EllipsoidSpec, n: int, rng, chunk: int = 10_000) -> np.ndarray:
    """Exact chord lengths through uniform points along uniform directions.

    Each chord comes from the two roots of ``(x + t v)^T A (x + t v) = 1``.
    """
    gen = as_generator(rng)
    a_diag = spec.eigenvalues
    out = np.empty(n)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = ellipsoid_sample(spec.semi_axes, gen, m)
        v = _unit_directions(gen, m, spec.dim)
        qa = np.sum(a_diag * v * v, axis=1)
        qb = np.sum(a_diag * x * v, axis=1)
        qc = np.sum(a_diag * x * x, axis=1) - 1.0
        out[start:start + m] = 2.0 * np.sqrt(qb * qb - qa * qc) / qa
    return out


def mc_interval_costs(ell: float, w: float, n: int, rng, cfg: SliceConfig | None = None) -> np.ndarray:
    """Per-step ``n_evals`` of slice steps on ``Uniform[0, ell]`` from uniform starts."""
    gen = as_generator(rng)
    cfg = cfg or SliceConfig(width=w)
    target = interval_target(ell)
    x0 = ell * gen.random((n, 1))
    v = np.ones((n, 1))
    sw = slice_sweep(x0, v, np.full(n, float(w)), np.zeros(n),
                     constrained_logf(target, 1.0), SliceConfig(width=w, max_stepout=cfg.max_stepout,
                                                                max_shrink=cfg.max_shrink), gen)
    return sw.n_evals


def mc_ellipsoid_costs(spec: EllipsoidSpec, w: float, n: int, rng, starts=None, dirs=None,
                       max_stepout: int = 10_000, max_shrink: int = 10_000) -> np.ndarray:
    """Per-step ``n_evals`` of one HRSS step from i.i.d. uniform starts in the ellipsoid.

    The validators lift the loop caps by default so the uncapped cost formula
    is what is being measured.
    """
    gen = as_generator(rng)
    target = level_set_target(spec.semi_axes)
    x0 = ellipsoid_sample(spec.semi_axes, gen, n) if starts is None else starts
    v = _unit_directions(gen, n, spec.dim) if dirs is None else dirs
    cfg = SliceConfig(width=w, max_stepout=max_stepout, max_shrink=max_shrink)
    sw = slice_sweep(x0, v, np.full(n, float(w)), np.zeros(n),
                     constrained_logf(target, 1.0), cfg, gen)
    return sw.n_evals


def cost_std_profile(spec: EllipsoidSpec, w: float, n: int, rng) -> tuple[float, float]:
    """MC mean and standard deviation of the per-step HRSS cost at width ``w``."""
    if n < 1000:
        raise ValueError("cost_std_profile needs n >= 1000")
    c = mc_ellipsoid_costs(spec, w, n, rng)
    return float(c.mean()), float(c.std(ddof=1))


def mc_optimal_width(spec: EllipsoidSpec, widths, n: int, rng) -> tuple[float, np.ndarray]:
    """Empirical cost-minimising width over a sweep.

    All widths share the same starts and directions.  The minimiser is read
    off a quartic fitted to the mean costs in ``log w``, which smooths the
    Monte Carlo noise of the individual grid points.
    """
    gen = as_generator(rng)
    widths = np.asarray(widths, dtype=float)
    x0 = ellipsoid_sample(spec.semi_axes, gen, n)
    v = _unit_directions(gen, n, spec.dim)
    costs = np.array([mc_ellipsoid_costs(spec, w, n, gen, x0, v).mean() for w in widths])
    lw = np.log(widths)
    if widths.size >= 5:
        coef = np.polyfit(lw, costs, 4)
        fine = np.linspace(lw.min(), lw.max(), 2001)
        return float(np.exp(fine[np.argmin(np.polyval(coef, fine))])), costs
    return float(widths[int(np.argmin(costs))]), costs


def tune_validate_rows(ell: float, widths, n: int, rng) -> list[tuple[float, float, float, float]]:
    """Rows ``(w, theory_cost, mc_cost, mc_std)`` for the interval target."""
    gen = as_generator(rng)
    rows = []
    for w in widths:
        c = mc_interval_costs(ell, float(w), n, gen)
        rows.append((float(w), expected_cost(ell, float(w)), float(c.mean()), float(c.std(ddof=1))))
    return rows
