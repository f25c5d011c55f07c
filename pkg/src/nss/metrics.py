"""Sample-quality metrics: MMD, sliced 2-Wasserstein and Kish ESS."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist, pdist

# directions for sliced_w2 come from this seed unless a generator is passed
PROJECTION_SEED = 20240601


def _as_cloud(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("samples must form an (n, d) array")
    return x


def median_bandwidth(x, y) -> float:
    """Median of the nonzero pairwise distances in the pooled set."""
    dist = pdist(np.vstack([x, y]))
    dist = dist[dist > 0]
    if dist.size == 0:
        raise ValueError("degenerate bandwidth")
    return float(np.median(dist))


def mmd(x, y, bandwidth: float | None = None) -> float:
    """Maximum mean discrepancy with a Gaussian kernel.

    Within-set terms are U-statistics (diagonal excluded) and the cross term
    is a V-statistic.  The squared estimate is clamped at zero before the
    square root is taken.
    """
    x, y = _as_cloud(x), _as_cloud(y)
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("mmd needs at least two samples per set")
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    sigma = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    g = -0.5 / sigma ** 2
    n, m = x.shape[0], y.shape[0]
    kxx = np.exp(g * pdist(x, "sqeuclidean")).sum() * 2 / (n * (n - 1))
    kyy = np.exp(g * pdist(y, "sqeuclidean")).sum() * 2 / (m * (m - 1))
    kxy = np.exp(g * cdist(x, y, "sqeuclidean")).mean()
    return float(np.sqrt(max(0.0, kxx + kyy - 2 * kxy)))


def sliced_w2(x, y, n_proj: int = 200, rng=None) -> float:
    """Sliced 2-Wasserstein distance from sorted one-dimensional projections."""
    x, y = _as_cloud(x), _as_cloud(y)
    if x.shape[0] != y.shape[0]:
        raise ValueError("sliced_w2 needs equal sample counts")
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    if x.shape[0] < 1 or n_proj < 1:
        raise ValueError("need at least one sample and one projection")
    gen = np.random.default_rng(PROJECTION_SEED) if rng is None else np.random.default_rng(rng)
    theta = gen.standard_normal((n_proj, x.shape[1]))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    px = np.sort(x @ theta.T, axis=0)
    py = np.sort(y @ theta.T, axis=0)
    return float(np.sqrt(np.mean((px - py) ** 2)))


def kish_ess(weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    top = w.max()
    if top <= 0:
        raise ValueError("all weights are zero")
    w = w / top
    return float(w.sum() ** 2 / np.dot(w, w))


def kish_ess_log(log_weights) -> float:
    """Kish ESS from log-weights, stable for spreads of hundreds of nats."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    if not np.any(np.isfinite(lw)):
        raise ValueError("all weights are zero")
    return kish_ess(np.exp(lw - lw[np.isfinite(lw)].max()))
