"""Shared building blocks: target models, random streams and the direction metric.

All samplers in the package evaluate targets in batches: ``log_prior`` and
``energy`` take an ``(n, d)`` array and return ``(n,)`` arrays.  An energy of
``+inf`` marks an invalid point (zero likelihood or a violated constraint) and a
log-prior of ``-inf`` marks a point outside the prior support.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]


class TargetError(ValueError):
    """Raised when a target returns NaN or violates its contract."""


@dataclass(frozen=True)
class TargetModel:
    """A prior density together with an energy (negative log-likelihood).

    Parameters
    ----------
    name : str
        Registry id, used in artifacts.
    dim : int
        Dimension ``d`` of the parameter space.
    log_prior, energy : callable
        Vectorised over the leading axis of an ``(n, d)`` array.
    prior_sample : callable
        ``prior_sample(rng, n)`` returns ``(n, d)`` draws from the prior.
    energy_grad : callable, optional
        Gradient of the energy, ``(n, d) -> (n, d)``.
    exact_log_z : float, optional
        Analytic log-evidence when known.
    bounds : tuple of arrays, optional
        ``(lo, hi)`` of the prior box for box-supported priors.
    reference_sample : callable, optional
        ``reference_sample(rng, n)`` draws exact posterior samples.
    """

    name: str
    dim: int
    log_prior: ArrayFn
    energy: ArrayFn
    prior_sample: Callable[[np.random.Generator, int], np.ndarray]
    energy_grad: Optional[ArrayFn] = None
    exact_log_z: Optional[float] = None
    bounds: Optional[tuple] = None
    reference_sample: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Fused prior-then-energy evaluation of a batch of points.

        The energy is only computed where the prior is finite; elsewhere it is
        reported as ``+inf``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lp = np.asarray(self.log_prior(x), dtype=float)
        en = np.full(lp.shape, np.inf)
        ok = np.isfinite(lp)
        if ok.any():
            en[ok] = self.energy(x[ok])
        if np.isnan(lp).any() or np.isnan(en).any():
            raise TargetError(f"target {self.name!r} returned NaN")
        return lp, en

    def log_prior_at(self, x) -> float:
        return float(self.log_prior(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def energy_at(self, x) -> float:
        return float(self.energy(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def grad_at(self, x) -> np.ndarray:
        if self.energy_grad is None:
            raise TargetError(f"target {self.name!r} has no energy gradient")
        return np.asarray(self.energy_grad(np.atleast_2d(np.asarray(x, dtype=float)))[0])


def _phase_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


class RngStream:
    """Counter-free reproducible random stream keyed by ``(seed, stream_id)``.

    The stream id is a tuple such as ``("ns", iteration, particle)``; string
    parts are hashed to integers.  Two streams with the same seed and id
    produce the same sequence no matter when or where they are created, which
    is what makes parallel mutation independent of scheduling.  A stream has
    a single owner; split it with :meth:`child` instead of sharing it.
    """

    __slots__ = ("master_seed", "stream_id", "_gen")

    def __init__(self, master_seed: int, stream_id: Sequence = ()):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = tuple(stream_id)
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = tuple(_phase_key(p) for p in self.stream_id)
            ss = np.random.SeedSequence(self.master_seed, spawn_key=key)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, *ids) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + tuple(ids))

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, id={self.stream_id})"


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngStream`, a numpy ``Generator`` or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class CovarianceMetric:
    """Positive definite conditioning matrix ``M`` for direction proposals.

    Directions are drawn as ``N(0, M^{-1})`` through ``factor``, the lower
    Cholesky factor of ``M^{-1}``.
    """

    matrix: np.ndarray
    factor: np.ndarray
    reg: float = 0.0

    @classmethod
    def from_matrix(cls, matrix, reg: float = 0.0) -> "CovarianceMetric":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError("metric must be square")
        if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12 * np.abs(m).max()):
            raise ValueError("metric must be symmetric")
        m = 0.5 * (m + m.T)
        inv = np.linalg.inv(m)
        inv = 0.5 * (inv + inv.T)
        factor = np.linalg.cholesky(inv)  # raises LinAlgError when not PD
        return cls(m, factor, float(reg))

    @classmethod
    def identity(cls, dim: int) -> "CovarianceMetric":
        eye = np.eye(dim)
        return cls(eye, eye.copy(), 0.0)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def inverse(self) -> "CovarianceMetric":
        """Metric whose matrix is ``M^{-1}``; its factor is ``chol(M)``."""
        m = self.matrix
        inv = np.linalg.inv(m)
        inv = 0.5 * (inv + inv.T)
        return CovarianceMetric(inv, np.linalg.cholesky(m), self.reg)

    def width_scale(self, v: np.ndarray) -> np.ndarray:
        """Length along unit direction(s) ``v`` of one unit in the metric geometry.

        Equals ``1 / sqrt(v^T M v)``; identity metrics give exactly 1.
        """
        v = np.atleast_2d(v)
        q = np.einsum("ni,ij,nj->n", v, self.matrix, v)
        return 1.0 / np.sqrt(q)


def estimate_metric(points, reg: float = 1e-6) -> CovarianceMetric:
    """Regularised empirical covariance of a point cloud.

    ``M = cov + reg * mean(diag(cov)) * I``.  When the result is still rank
    deficient (for instance a cloud of identical points) the identity scaled
    by the mean sample variance is returned instead, or the plain identity if
    that variance is zero.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("points must form an (n, d) array")
    if pts.shape[0] < 2:
        raise ValueError("estimate_metric needs at least 2 points")
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    d = pts.shape[1]
    # sort rows so the floating-point sum does not depend on the input order
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    cov = np.atleast_2d(np.cov(pts, rowvar=False))
    scale = float(np.mean(np.diag(cov)))
    m = cov + reg * scale * np.eye(d)
    eig = np.linalg.eigvalsh(m)
    if not np.all(np.isfinite(eig)) or eig.min() <= 1e-12 * max(eig.max(), 0.0) or eig.max() <= 0:
        fallback = scale if scale > 0 and np.isfinite(scale) else 1.0
        return CovarianceMetric(fallback * np.eye(d), np.eye(d) / np.sqrt(fallback), float(reg))
    return CovarianceMetric.from_matrix(m, reg)


def draw_direction(metric: CovarianceMetric, rng) -> np.ndarray:
    """Unit vector ``v = z / |z|`` with ``z ~ N(0, M^{-1})``."""
    gen = as_generator(rng)
    while True:
        z = gen.standard_normal(metric.dim)
        dt = (metric.factor * z).sum(axis=1)
        norm = np.sqrt(np.dot(dt, dt))
        if norm > 0:
            return dt / norm
