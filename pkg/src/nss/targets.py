"""Benchmark targets with analytic or quadrature evidence.

Every target uses a uniform prior on a box unless stated otherwise, so the
log-prior is ``-log(volume)`` inside and ``-inf`` outside.  Energies are
written with elementwise numpy operations (no matrix products) so that a
point's energy is bit-identical whatever batch it is evaluated in.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from .core import TargetModel

LOG_2PI = float(np.log(2 * np.pi))


def _box_prior(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    log_vol = float(np.sum(np.log(hi - lo)))

    def log_prior(x):
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        return np.where(inside, -log_vol, -np.inf)

    def prior_sample(rng, n):
        return lo + (hi - lo) * rng.random((n, lo.size))

    return log_prior, prior_sample, log_vol


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture with diagonal covariances on a uniform prior box."""

    weights: np.ndarray
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d) diagonal covariances
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if abs(w.sum() - 1.0) > 1e-10 or np.any(w < 0):
            raise ValueError("mixture weights must lie on the simplex")
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise ValueError("inconsistent mixture shapes")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        if lo.shape != (mu.shape[1],) or hi.shape != lo.shape or np.any(hi <= lo):
            raise ValueError("bad prior box")
        if np.any(mu < lo) or np.any(mu > hi):
            raise ValueError("means must lie inside the prior box")

    @property
    def dim(self) -> int:
        return np.atleast_2d(self.means).shape[1]


def mog_log_z(spec: MixtureSpec) -> float:
    """log of (mixture mass inside the box) / (box volume), via erf products."""
    mu = np.atleast_2d(spec.means)
    sd = np.sqrt(np.atleast_2d(spec.variances))
    lo, hi = np.asarray(spec.lo), np.asarray(spec.hi)
    # log of per-axis mass, computed with log_ndtr differences for accuracy
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    mass = special.ndtr(b) - special.ndtr(a)
    log_mass = np.sum(np.log(mass), axis=1)
    log_vol = float(np.sum(np.log(hi - lo)))
    return float(special.logsumexp(log_mass, b=np.asarray(spec.weights))) - log_vol


def mog_target(spec: MixtureSpec, name: str = "mog") -> TargetModel:
    w = np.asarray(spec.weights, dtype=float)
    mu = np.atleast_2d(np.asarray(spec.means, dtype=float))
    var = np.atleast_2d(np.asarray(spec.variances, dtype=float))
    log_norm = np.log(w) - 0.5 * np.sum(np.log(var), axis=1) - 0.5 * mu.shape[1] * LOG_2PI
    log_prior, prior_sample, _ = _box_prior(spec.lo, spec.hi)

    def comp_logs(x):
        diff = x[:, None, :] - mu[None, :, :]
        return log_norm[None, :] - 0.5 * np.sum(diff * diff / var[None], axis=2), diff

    def energy(x):
        lc, _ = comp_logs(x)
        return -special.logsumexp(lc, axis=1)

    def energy_grad(x):
        lc, diff = comp_logs(x)
        r = np.exp(lc - special.logsumexp(lc, axis=1, keepdims=True))
        return np.sum(r[:, :, None] * diff / var[None], axis=1)

    lo, hi = np.asarray(spec.lo, float), np.asarray(spec.hi, float)

    def reference_sample(rng, n):
        out = np.empty((n, mu.shape[1]))
        filled = 0
        while filled < n:
            k = rng.choice(w.size, size=n - filled, p=w)
            z = mu[k] + np.sqrt(var[k]) * rng.standard_normal((n - filled, mu.shape[1]))
            z = z[np.all((z >= lo) & (z <= hi), axis=1)]
            out[filled:filled + len(z)] = z
            filled += len(z)
        return out

    return TargetModel(
        name=name, dim=mu.shape[1], log_prior=log_prior, energy=energy,
        prior_sample=prior_sample, energy_grad=energy_grad, exact_log_z=mog_log_z(spec),
        bounds=(lo, hi), reference_sample=reference_sample,
        params={"n_components": int(w.size)},
    )


def mog40_spec(seed: int = 0, half_width: float = 50.0) -> MixtureSpec:
    """40 unit-variance modes drawn uniformly in the inner 80% of a square box."""
    rng = np.random.default_rng(seed)
    inner = 0.8 * half_width
    means = rng.uniform(-inner, inner, size=(40, 2))
    return MixtureSpec(np.full(40, 1 / 40), means, np.ones((40, 2)),
                       np.full(2, -half_width), np.full(2, half_width))


def mog10_spec(seed: int = 0, dim: int = 10, n_components: int = 5,
               half_width: float = 50.0) -> MixtureSpec:
    """Five diagonal Gaussians with seeded random means and variances."""
    rng = np.random.default_rng(seed)
    inner = 0.8 * half_width
    means = rng.uniform(-inner, inner, size=(n_components, dim))
    variances = rng.uniform(0.5, 3.0, size=(n_components, dim))
    return MixtureSpec(np.full(n_components, 1 / n_components), means, variances,
                       np.full(dim, -half_width), np.full(dim, half_width))


def funnel_log_z(d: int, box=(-20.0, 20.0)) -> float:
    """Log-evidence of the funnel under the uniform prior on ``box^d``."""
    a, b = float(box[0]), float(box[1])

    def mass(y):
        s = np.sqrt(2.0) * np.exp(y / 2)
        px = 0.5 * (special.erf(b / s) - special.erf(a / s))
        return np.exp(-0.5 * (y / 3.0) ** 2) / (3.0 * np.sqrt(2 * np.pi)) * px ** (d - 1)

    val, _ = integrate.quad(mass, a, b, points=[x for x in (-5.0, 0.0, 5.0, 10.0) if a < x < b],
                            limit=400, epsabs=0.0, epsrel=1e-12)
    return float(np.log(val) - d * np.log(b - a))


def funnel_target(d: int = 10, box=(-20.0, 20.0)) -> TargetModel:
    """Neal's funnel: ``y ~ N(0, 3^2)``, ``x_n | y ~ N(0, (e^{y/2})^2)``.

    The first coordinate is ``y``.  The evidence depends on the box; it is
    computed by one-dimensional quadrature over ``y`` of the box mass of the
    conditional normals.
    """
    if d < 2:
        raise ValueError("funnel needs d >= 2")
    lo = np.full(d, float(box[0]))
    hi = np.full(d, float(box[1]))
    log_prior, prior_sample, _ = _box_prior(lo, hi)
    n_x = d - 1

    def energy(x):
        y = x[:, 0]
        xs = x[:, 1:]
        e_y = 0.5 * (y / 3.0) ** 2 + np.log(3.0) + 0.5 * LOG_2PI
        e_x = 0.5 * np.exp(-y) * np.sum(xs * xs, axis=1) + 0.5 * n_x * y + 0.5 * n_x * LOG_2PI
        return e_y + e_x

    def energy_grad(x):
        y = x[:, 0]
        xs = x[:, 1:]
        g = np.empty_like(x)
        g[:, 0] = y / 9.0 - 0.5 * np.exp(-y) * np.sum(xs * xs, axis=1) + 0.5 * n_x
        g[:, 1:] = xs * np.exp(-y)[:, None]
        return g

    def reference_sample(rng, n):
        out = np.empty((n, d))
        filled = 0
        while filled < n:
            y = 3.0 * rng.standard_normal(n - filled)
            z = np.exp(y / 2)[:, None] * rng.standard_normal((n - filled, n_x))
            s = np.column_stack([y, z])
            s = s[np.all((s >= lo) & (s <= hi), axis=1)]
            out[filled:filled + len(s)] = s
            filled += len(s)
        return out

    return TargetModel(name=f"funnel{d}", dim=d, log_prior=log_prior, energy=energy,
                       prior_sample=prior_sample, energy_grad=energy_grad,
                       exact_log_z=funnel_log_z(d, box), bounds=(lo, hi), reference_sample=reference_sample,
                       params={"box": [float(box[0]), float(box[1])]})


@dataclass(frozen=True)
class AlphaLikelihoodSpec:
    """Gaussian / cosine-comb mixture likelihood on the cube ``[-r, r]^d``."""

    alpha: float
    d: int
    r: float = 5.14
    A: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.d < 1 or self.r <= 0 or self.A < 0:
            raise ValueError("invalid alpha-likelihood parameters")


def gauss_integral(r: float) -> float:
    """Integral of exp(-x^2/2) over [-r, r], by adaptive quadrature."""
    return integrate.quad(lambda t: np.exp(-0.5 * t * t), -r, r, epsabs=1e-14, epsrel=1e-13)[0]


def cosine_integral_log(r: float, A: float) -> float:
    """log of the integral of exp(A cos 2 pi x) over [-r, r].

    The integrand is split at its period boundaries; ``exp(A)`` is factored
    out for stability.
    """
    f = lambda t: np.exp(A * (np.cos(2 * np.pi * t) - 1.0))
    edges = np.concatenate([[-r], np.arange(np.ceil(-r * 2) / 2, r, 0.5), [r]])
    edges = np.unique(edges)
    total = sum(integrate.quad(f, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
                for a, b in zip(edges[:-1], edges[1:]))
    return float(np.log(total) + A)


def alpha_log_z(spec: AlphaLikelihoodSpec) -> float:
    d, r, A, a = spec.d, spec.r, spec.A, spec.alpha
    terms, coefs = [], []
    if a > 0:
        terms.append(d * np.log(gauss_integral(r)))
        coefs.append(a)
    if a < 1:
        terms.append(-A * d + d * cosine_integral_log(r, A))
        coefs.append(1 - a)
    return float(special.logsumexp(terms, b=coefs)) - d * np.log(2 * r)


def alpha_target(spec: AlphaLikelihoodSpec) -> TargetModel:
    """``L = alpha * f + (1 - alpha) * g`` with a unit Gaussian ``f`` and
    ``g = exp(-A d + A sum cos(2 pi theta_i))``."""
    d, r, A, a = spec.d, spec.r, spec.A, spec.alpha
    lo, hi = np.full(d, -r), np.full(d, r)
    log_prior, prior_sample, _ = _box_prior(lo, hi)
    la = np.log(a) if a > 0 else -np.inf
    lb = np.log1p(-a) if a < 1 else -np.inf

    def parts(x):
        log_f = la - 0.5 * np.sum(x * x, axis=1) if a > 0 else np.full(len(x), -np.inf)
        if a < 1:
            log_g = lb - A * d + A * np.sum(np.cos(2 * np.pi * x), axis=1)
        else:
            log_g = np.full(len(x), -np.inf)
        return log_f, log_g

    def energy(x):
        log_f, log_g = parts(x)
        return -np.logaddexp(log_f, log_g)

    def energy_grad(x):
        log_f, log_g = parts(x)
        tot = np.logaddexp(log_f, log_g)
        rf = np.exp(log_f - tot)[:, None]
        rg = np.exp(log_g - tot)[:, None]
        return rf * x + rg * (2 * np.pi * A) * np.sin(2 * np.pi * x)

    return TargetModel(name="alpha", dim=d, log_prior=log_prior, energy=energy,
                       prior_sample=prior_sample, energy_grad=energy_grad,
                       exact_log_z=alpha_log_z(spec), bounds=(lo, hi),
                       params={"alpha": a, "r": r, "A": A})


def ellipsoid_sample(semi_axes, rng, n) -> np.ndarray:
    """Uniform draws from the ellipsoid with the given semi-axes."""
    s = np.asarray(semi_axes, dtype=float)
    z = rng.standard_normal((n, s.size))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    rad = rng.random(n) ** (1.0 / s.size)
    return s * z * rad[:, None]


def level_set_target(semi_axes: Optional[Sequence[float]] = None, *, cube_side=None,
                     dim: Optional[int] = None) -> TargetModel:
    """Hard-constraint region: an axis-aligned ellipsoid or a cube.

    Pass ``semi_axes`` for the ellipsoid ``sum (x_i / s_i)^2 <= 1``, or
    ``cube_side`` (scalar or per-axis) with ``dim`` for a centred cube.  The
    prior is flat (log-prior 0) on the bounding box and the energy is 0 in the
    region and ``+inf`` outside it.
    """
    if semi_axes is not None:
        s = np.asarray(semi_axes, dtype=float)
        lo, hi = -s, s.copy()

        def energy(x):
            q = np.sum((x / s) ** 2, axis=1)
            return np.where(q <= 1.0, 0.0, np.inf)

        def sample(rng, n):
            return ellipsoid_sample(s, rng, n)

        name = "ball" if np.all(s == s[0]) else "ellipsoid"
    else:
        if cube_side is None or dim is None:
            raise ValueError("give semi_axes, or cube_side and dim")
        half = np.broadcast_to(np.asarray(cube_side, dtype=float) / 2, (dim,)).copy()
        lo, hi = -half, half

        def energy(x):
            return np.where(np.all(np.abs(x) <= half, axis=1), 0.0, np.inf)

        def sample(rng, n):
            return lo + (hi - lo) * rng.random((n, dim))

        name = "cube"

    def log_prior(x):
        return np.where(np.all((x >= lo) & (x <= hi), axis=1), 0.0, -np.inf)

    return TargetModel(name=name, dim=lo.size, log_prior=log_prior, energy=energy,
                       prior_sample=sample, bounds=(lo, hi), reference_sample=sample)


def interval_target(length: float) -> TargetModel:
    """Uniform distribution on ``[0, length]`` with zero energy."""
    lo, hi = np.zeros(1), np.full(1, float(length))

    def log_prior(x):
        return np.where((x[:, 0] >= 0) & (x[:, 0] <= length), 0.0, -np.inf)

    return TargetModel(name="interval", dim=1, log_prior=log_prior,
                       energy=lambda x: np.zeros(len(x)),
                       prior_sample=lambda rng, n: length * rng.random((n, 1)),
                       bounds=(lo, hi), reference_sample=lambda rng, n: length * rng.random((n, 1)))


def gaussian_target(scales, half_width: float) -> TargetModel:
    """``E = 0.5 * sum (x_i / s_i)^2`` on the box ``[-h, h]^d``."""
    s = np.atleast_1d(np.asarray(scales, dtype=float))
    d = s.size
    lo, hi = np.full(d, -half_width), np.full(d, half_width)
    log_prior, prior_sample, log_vol = _box_prior(lo, hi)
    log_mass = np.sum(np.log(np.sqrt(2 * np.pi) * s * special.erf(half_width / (np.sqrt(2) * s))))

    def energy(x):
        return 0.5 * np.sum((x / s) ** 2, axis=1)

    def energy_grad(x):
        return x / s ** 2

    def reference_sample(rng, n):
        out = np.empty((n, d))
        filled = 0
        while filled < n:
            z = s * rng.standard_normal((n - filled, d))
            z = z[np.all(np.abs(z) <= half_width, axis=1)]
            out[filled:filled + len(z)] = z
            filled += len(z)
        return out

    return TargetModel(name="gauss", dim=d, log_prior=log_prior, energy=energy,
                       prior_sample=prior_sample, energy_grad=energy_grad,
                       exact_log_z=float(log_mass - log_vol), bounds=(lo, hi),
                       reference_sample=reference_sample)


def make_target(name: str, **params) -> TargetModel:
    """Registry lookup used by the command line."""
    if name == "mog40":
        return mog_target(mog40_spec(seed=params.get("layout_seed", 0)), name="mog40")
    if name == "mog10":
        spec = mog10_spec(seed=params.get("layout_seed", 0), dim=params.get("dim", 10))
        return mog_target(spec, name="mog10")
    if name in ("funnel", "funnel10"):
        box = params.get("box", (-20.0, 20.0))
        return funnel_target(params.get("dim", 10), tuple(box))
    if name == "alpha":
        return alpha_target(AlphaLikelihoodSpec(alpha=float(params.get("alpha", 0.5)),
                                                d=int(params.get("dim", 2)),
                                                r=float(params.get("r", 5.14)),
                                                A=float(params.get("A", 10.0))))
    if name == "ball":
        d = int(params.get("dim", 10))
        return level_set_target(np.full(d, float(params.get("radius", 1.0))))
    if name == "cube":
        return level_set_target(cube_side=float(params.get("side", 2.0)),
                                dim=int(params.get("dim", 10)))
    if name == "gauss":
        d = int(params.get("dim", 2))
        return gaussian_target(np.full(d, float(params.get("scale", 1.0))),
                               float(params.get("half_width", 10.0)))
    raise KeyError(f"unknown target id {name!r}")


TARGET_IDS = ("mog40", "mog10", "funnel10", "alpha", "ball", "cube", "gauss")
