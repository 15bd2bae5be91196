"""Base distributions, rewards and the annealed / reward-tilted target path.

The only shipped base model is an isotropic Gaussian mixture whose diffused
marginals ``p_sigma = p_0 * N(0, sigma^2 I)`` are again Gaussian mixtures, so
log-density, score and score Laplacian are exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp, softmax

LOG_2PI = np.log(2.0 * np.pi)


class RewardAbsentError(RuntimeError):
    pass


class ScoreEval(NamedTuple):
    score: np.ndarray
    laplacian: Optional[np.ndarray] = None
    logp: Optional[np.ndarray] = None


class ScoreModel:
    """Interface for a diffused base model evaluated at noise level ``sigma``.

    Subclasses implement :meth:`score`; :meth:`log_density` and
    :meth:`score_laplacian` are optional and raise ``NotImplementedError``
    when unavailable (the engine then falls back to Hutchinson estimates and
    drops log-density bases).
    """

    dim: int

    def score(self, x, sigma):
        raise NotImplementedError

    def log_density(self, x, sigma):
        raise NotImplementedError

    def score_laplacian(self, x, sigma):
        raise NotImplementedError

    @property
    def has_log_density(self) -> bool:
        return type(self).log_density is not ScoreModel.log_density

    @property
    def has_laplacian(self) -> bool:
        return type(self).score_laplacian is not ScoreModel.score_laplacian

    def evaluate(self, x, sigma, need_logp=False, need_laplacian=True) -> ScoreEval:
        lap = self.score_laplacian(x, sigma) if need_laplacian and self.has_laplacian else None
        logp = self.log_density(x, sigma) if need_logp and self.has_log_density else None
        return ScoreEval(self.score(x, sigma), lap, logp)


@dataclass(frozen=True, eq=False)
class GmmSpec(ScoreModel):
    """Isotropic Gaussian mixture with a shared component variance."""

    means: np.ndarray
    component_variance: float = 50.0
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "means", means)
        k = means.shape[0]
        w = np.full(k, 1.0 / k) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (k,):
            raise ValueError(f"expected {k} weights, got shape {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if self.component_variance <= 0:
            raise ValueError("component_variance must be positive")
        object.__setattr__(self, "weights", w)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_w", np.log(w))
        object.__setattr__(self, "_mu_sq", np.einsum("kd,kd->k", means, means))

    @classmethod
    def random(cls, n_components=40, dim=30, low=-40.0, high=40.0, variance=50.0, seed=0):
        """Means drawn uniformly from ``[low, high]^dim`` with a recorded seed."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(low, high, size=(n_components, dim)), variance)

    @classmethod
    def from_csv(cls, path, variance=50.0, weights=None):
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        try:
            means = np.array([[float(v) for v in r] for r in rows])
        except ValueError:
            means = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(means, variance, weights)

    def to_csv(self, path):
        np.savetxt(path, self.means, delimiter=",", fmt="%.17g")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def _sq_dists(self, x):
        x = np.atleast_2d(x)
        d2 = np.einsum("nd,nd->n", x, x)[:, None] - 2.0 * x @ self.means.T + self._mu_sq[None, :]
        return np.maximum(d2, 0.0)

    def component_logpdf(self, x, sigma=0.0):
        """``log w_i + log N(x; mu_i, (v + sigma^2) I)`` for every row of ``x``."""
        s = self.component_variance + sigma ** 2
        d2 = self._sq_dists(x)
        return self._log_w[None, :] - 0.5 * (d2 / s + self.dim * (LOG_2PI + np.log(s)))

    def responsibilities(self, x, sigma=0.0):
        return softmax(self.component_logpdf(x, sigma), axis=1)

    def log_density(self, x, sigma=0.0):
        out = logsumexp(self.component_logpdf(x, sigma), axis=1)
        return out if np.ndim(x) > 1 else out[0]

    def score(self, x, sigma=0.0):
        return self.evaluate(x, sigma, need_laplacian=False).score

    def score_laplacian(self, x, sigma=0.0):
        return self.evaluate(x, sigma).laplacian

    def evaluate(self, x, sigma=0.0, need_logp=False, need_laplacian=True) -> ScoreEval:
        single = np.ndim(x) == 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = self.component_variance + sigma ** 2
        d2 = self._sq_dists(x)
        logits = self._log_w[None, :] - 0.5 * (d2 / s + self.dim * (LOG_2PI + np.log(s)))
        peak = logits.max(axis=1, keepdims=True)
        resp = np.exp(logits - peak)
        total = resp.sum(axis=1, keepdims=True)
        resp /= total
        lse = (peak + np.log(total))[:, 0]
        score = (resp @ self.means - x) / s
        lap = None
        if need_laplacian:
            # sum_i pi_i (lap log N_i + |grad log N_i|^2) - |score|^2
            lap = (np.einsum("nk,nk->n", resp, d2) / s ** 2 - self.dim / s
                   - np.einsum("nd,nd->n", score, score))
        logp = lse if need_logp else None
        if single:
            return ScoreEval(score[0], None if lap is None else lap[0], None if logp is None else logp[0])
        return ScoreEval(score, lap, logp)


def gmm_diffused_logpdf(gmm: GmmSpec, sigma, x):
    return gmm.log_density(x, sigma)


def gmm_diffused_score(gmm: GmmSpec, sigma, x):
    return gmm.score(x, sigma)


def gmm_diffused_score_laplacian(gmm: GmmSpec, sigma, x):
    return gmm.score_laplacian(x, sigma)


@dataclass(frozen=True, eq=False)
class QuadraticReward:
    """``r(x) = -|x - center|^2 / (2 scale)``."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())
        if not self.scale > 0:
            raise ValueError(f"reward scale must be positive, got {self.scale}")

    @classmethod
    def random(cls, dim, scale, center_variance=100.0, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, np.sqrt(center_variance), size=dim), scale)

    @property
    def dim(self):
        return self.center.shape[0]

    def value(self, x):
        diff = np.asarray(x, dtype=float) - self.center
        return -0.5 * np.einsum("...d,...d->...", diff, diff) / self.scale

    def grad(self, x):
        return -(np.asarray(x, dtype=float) - self.center) / self.scale

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], -self.dim / self.scale) if x.ndim > 1 else -self.dim / self.scale


@dataclass(frozen=True)
class RewardSchedule:
    """Interpolation weight ``beta_t`` with ``beta_T = 1``.

    Only ``kind="linear"`` (``beta_t = t / T``) is implemented.
    """

    horizon: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise NotImplementedError(f"reward schedule {self.kind!r} is not implemented")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def beta(self, t):
        return min(max(t / self.horizon, 0.0), 1.0)

    def beta_dot(self, t):
        return 1.0 / self.horizon


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """``q_t ∝ p_t^gamma exp(beta_t r)``; pure annealing when ``reward`` is None."""

    base: ScoreModel
    gamma: float = 1.0
    reward: Optional[QuadraticReward] = None
    reward_schedule: Optional[RewardSchedule] = None

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.reward is not None and self.reward_schedule is None:
            raise ValueError("a reward requires a reward_schedule")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def has_reward(self) -> bool:
        return self.reward is not None

    def _require_reward(self):
        if self.reward is None:
            raise RewardAbsentError("target has no reward (pure annealing)")

    def reward_value(self, t, x):
        self._require_reward()
        return self.reward_schedule.beta(t) * self.reward.value(x)

    def reward_grad(self, t, x):
        self._require_reward()
        return self.reward_schedule.beta(t) * self.reward.grad(x)

    def reward_laplacian(self, t, x):
        self._require_reward()
        return self.reward_schedule.beta(t) * self.reward.laplacian(x)

    def reward_time_derivative(self, t, x):
        self._require_reward()
        return self.reward_schedule.beta_dot(t) * self.reward.value(x)

    def log_unnormalized(self, x, sigma=0.0):
        """``gamma log p_sigma(x) + r(x)`` with the full reward (final-time target)."""
        out = self.gamma * self.base.log_density(x, sigma)
        if self.reward is not None:
            out = out + self.reward.value(x)
        return out


@dataclass(frozen=True)
class DoubleWellSpec:
    """Four particles in 2-D with pairwise double-well interactions."""

    a: float = 0.0
    b: float = -4.0
    c: float = 0.9
    d0: float = 4.0
    harmonic: float = 0.05
    temperature: float = 1.0
    n_particles: int = 4
    dim: int = 2

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("quartic coefficient c must be positive")


def _pairs(n):
    return np.triu_indices(n, k=1)


def dw4_potential(spec: DoubleWellSpec, x):
    """Unscaled potential ``H_DW + (lambda/2) sum |r_i - rbar|^2``; batched over leading axes."""
    x = np.asarray(x, dtype=float)
    i, j = _pairs(spec.n_particles)
    d = np.linalg.norm(x[..., i, :] - x[..., j, :], axis=-1)
    s = d - spec.d0
    h = 0.5 * np.sum(spec.a * s + spec.b * s ** 2 + spec.c * s ** 4, axis=-1)
    centered = x - x.mean(axis=-2, keepdims=True)
    return h + 0.5 * spec.harmonic * np.sum(centered ** 2, axis=(-2, -1))


def dw4_potential_force(spec: DoubleWellSpec, x):
    """``-grad`` of :func:`dw4_potential`."""
    x = np.asarray(x, dtype=float)
    i, j = _pairs(spec.n_particles)
    diff = x[..., i, :] - x[..., j, :]
    d = np.linalg.norm(diff, axis=-1)
    s = d - spec.d0
    dh_dd = 0.5 * (spec.a + 2 * spec.b * s + 4 * spec.c * s ** 3)
    pair_grad = (dh_dd / np.maximum(d, 1e-300))[..., None] * diff
    grad = np.zeros_like(x)
    for p in range(len(i)):
        grad[..., i[p], :] += pair_grad[..., p, :]
        grad[..., j[p], :] -= pair_grad[..., p, :]
    grad += spec.harmonic * (x - x.mean(axis=-2, keepdims=True))
    return -grad


def dw4_energy(spec: DoubleWellSpec, x):
    """Dimensionless energy ``potential / T``."""
    return dw4_potential(spec, x) / spec.temperature


def dw4_force(spec: DoubleWellSpec, x):
    return dw4_potential_force(spec, x) / spec.temperature
