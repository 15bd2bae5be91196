"""Sample-quality metrics for weighted point sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist


@dataclass(frozen=True, eq=False)
class WeightedSamples:
    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape != (n,):
                raise ValueError(f"expected {n} weights, got {w.shape}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def wrap(cls, obj, weights=None):
        return obj if isinstance(obj, cls) else cls(obj, weights)

    @property
    def dim(self):
        return self.points.shape[1]

    def mean(self):
        return self.weights @ self.points

    def cov(self):
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c


def delta_nll(samples, reference, unnormalized_logq: Callable):
    """``-E_w[log q] + E_ref[log q]`` with an unnormalised ``log q``."""
    a, b = WeightedSamples.wrap(samples), WeightedSamples.wrap(reference)
    return float(-(a.weights @ unnormalized_logq(a.points)) + b.weights @ unnormalized_logq(b.points))


def rff_draw(dim, bandwidth, features, seed):
    if features % 2:
        raise ValueError("features must be even")
    rng = np.random.default_rng(seed)
    omega = rng.normal(0.0, 1.0 / bandwidth, size=(dim, features // 2))
    phase = rng.uniform(0.0, 2 * np.pi, size=features // 2)
    return omega, phase


def rff_embed(x, omega, phase):
    """Weighted-mean-ready features with ``z(x).z(y) ~ exp(-|x-y|^2 / 2 bw^2)``."""
    proj = x @ omega + phase
    scale = np.sqrt(1.0 / omega.shape[1])
    return scale * np.concatenate([np.cos(proj), np.sin(proj)], axis=1)


def mmd_rff(a, b, bandwidth=20.0, features=2048, seed=0, chunk=16384):
    """Squared MMD under an RBF kernel, via random Fourier features."""
    a, b = WeightedSamples.wrap(a), WeightedSamples.wrap(b)
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    omega, phase = rff_draw(a.dim, bandwidth, features, seed)

    def mean_embedding(s):
        out = np.zeros(features)
        for i in range(0, len(s.weights), chunk):
            out += s.weights[i:i + chunk] @ rff_embed(s.points[i:i + chunk], omega, phase)
        return out

    diff = mean_embedding(a) - mean_embedding(b)
    return float(diff @ diff)


def rbf_kernel(x, y, bandwidth):
    return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * bandwidth ** 2))


def mmd_exact(a, b, bandwidth=20.0):
    """Squared MMD from the full weighted kernel double sum."""
    a, b = WeightedSamples.wrap(a), WeightedSamples.wrap(b)
    kaa = a.weights @ rbf_kernel(a.points, a.points, bandwidth) @ a.weights
    kbb = b.weights @ rbf_kernel(b.points, b.points, bandwidth) @ b.weights
    kab = a.weights @ rbf_kernel(a.points, b.points, bandwidth) @ b.weights
    return float(kaa + kbb - 2.0 * kab)


def _sorted(values, weights):
    v = np.asarray(values, dtype=float).ravel()
    w = np.full(len(v), 1.0 / len(v)) if weights is None else np.asarray(weights, dtype=float).ravel()
    order = np.argsort(v, kind="stable")
    return v[order], w[order] / w.sum()


def w1_1d(values_a, weights_a, values_b, weights_b):
    """``int |F_a - F_b| dx`` over the merged support."""
    va, wa = _sorted(values_a, weights_a)
    vb, wb = _sorted(values_b, weights_b)
    xs = np.concatenate([va, vb])
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    jumps = np.concatenate([wa, -wb])[order]
    diff = np.cumsum(jumps)[:-1]
    return float(np.sum(np.abs(diff) * np.diff(xs)))


def w2_1d(values_a, weights_a, values_b, weights_b):
    """Squared 1-D W2 by integrating squared quantile differences."""
    va, wa = _sorted(values_a, weights_a)
    vb, wb = _sorted(values_b, weights_b)
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    levels = np.union1d(ca, cb)
    dp = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - 0.5 * dp
    qa = va[np.minimum(np.searchsorted(ca, mid), len(va) - 1)]
    qb = vb[np.minimum(np.searchsorted(cb, mid), len(vb) - 1)]
    return float(np.sum(dp * (qa - qb) ** 2))


def sliced_wasserstein(a, b, projections=10, seed=0):
    """Root mean over random unit directions of the squared 1-D W2."""
    a, b = WeightedSamples.wrap(a), WeightedSamples.wrap(b)
    if projections < 1:
        raise ValueError("projections must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((projections, a.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a.points @ dirs.T, b.points @ dirs.T
    vals = [w2_1d(pa[:, j], a.weights, pb[:, j], b.weights) for j in range(projections)]
    return float(np.sqrt(np.mean(vals)))


@dataclass
class RadialDistribution:
    distances: np.ndarray
    weights: np.ndarray
    bin_edges: np.ndarray
    histogram: np.ndarray


def rdf(configs, weights=None, bins=256):
    """Weighted pair-distance distribution of ``(B, n_particles, dim)`` configurations."""
    x = np.asarray(configs, dtype=float)
    if x.ndim == 2:
        x = x[None]
    B, n = x.shape[:2]
    cw = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    d = np.stack([pdist(c) for c in x])
    pw = np.repeat(cw[:, None] / d.shape[1], d.shape[1], axis=1)
    d, pw = d.ravel(), pw.ravel()
    edges = np.linspace(0.0, max(d.max(), 1e-12), bins + 1)
    hist, _ = np.histogram(d, bins=edges, weights=pw)
    return RadialDistribution(d, pw, edges, hist)


def rdf_w1(configs_a, configs_b, weights_a=None, weights_b=None):
    ra, rb = rdf(configs_a, weights_a), rdf(configs_b, weights_b)
    return w1_1d(ra.distances, ra.weights, rb.distances, rb.weights)


def summary_stats(a, reference):
    a, r = WeightedSamples.wrap(a), WeightedSamples.wrap(reference)
    if a.dim != r.dim:
        raise ValueError("dimension mismatch")
    return {
        "mean_l2": float(np.linalg.norm(a.mean() - r.mean())),
        "cov_frobenius": float(np.linalg.norm(a.cov() - r.cov(), "fro")),
    }


def evaluate_all(samples, reference, unnormalized_logq=None, bandwidth=20.0, features=2048,
                 rff_seed=0, projections=10, swd_seed=0):
    """Flat report with the table columns (MMD is the raw squared value)."""
    a, r = WeightedSamples.wrap(samples), WeightedSamples.wrap(reference)
    out = {}
    if unnormalized_logq is not None:
        out["delta_nll"] = delta_nll(a, r, unnormalized_logq)
    out["mmd2"] = mmd_rff(a, r, bandwidth, features, rff_seed)
    out["swd"] = sliced_wasserstein(a, r, projections, swd_seed)
    out.update(summary_stats(a, r))
    return out
