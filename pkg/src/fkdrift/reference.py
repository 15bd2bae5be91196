"""Ground-truth samplers: exact annealed-GMM rejection, posterior GMM, BAOAB Langevin."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .targets import LOG_2PI, DoubleWellSpec, GmmSpec, QuadraticReward, dw4_potential, dw4_potential_force

log = logging.getLogger(__name__)


class AcceptanceCollapseWarning(RuntimeWarning):
    pass


class EnvelopeViolation(AssertionError):
    pass


class LangevinDivergence(RuntimeError):
    pass


def sample_gmm(gmm: GmmSpec, n, seed=0):
    rng = np.random.default_rng(seed)
    comp = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    return gmm.means[comp] + np.sqrt(gmm.component_variance) * rng.standard_normal((n, gmm.dim))


def _lse_gauss(log_w, d2, var, d):
    logits = log_w[None, :] - 0.5 * (d2 / var + d * (LOG_2PI + np.log(var)))
    peak = logits.max(axis=1)
    return peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))


def annealed_envelope_log_const(gmm: GmmSpec, gamma):
    """``log(C_gamma * max_i K w_i)`` bounding ``p^gamma`` by a multiple of the proposal."""
    v, d, K = gmm.component_variance, gmm.dim, gmm.n_components
    log_c = -0.5 * d * gamma * np.log(2 * np.pi * v) + 0.5 * d * np.log(2 * np.pi * v / gamma)
    with np.errstate(divide="ignore"):
        return log_c + np.log(K * np.max(gmm.weights))


def sample_annealed_gmm(gmm: GmmSpec, gamma, n, seed=0, reward: Optional[QuadraticReward] = None,
                        batch=200_000, max_proposals=None):
    """Exact draws from ``q ∝ p^gamma exp(r)`` by rejection.

    Proposal is the equal-weight mixture of ``N(mu_i, v/gamma I)``; since
    ``r <= 0`` the reward only lowers the acceptance ratio.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    rng = np.random.default_rng(seed)
    K, d = gmm.n_components, gmm.dim
    sd = np.sqrt(gmm.component_variance / gamma)
    prop = GmmSpec(gmm.means, gmm.component_variance / gamma)
    log_M = annealed_envelope_log_const(gmm, gamma)
    max_proposals = max_proposals or 1000 * n + 10 ** 7
    out, total, accepted = [], 0, 0
    while accepted < n:
        comp = rng.integers(K, size=batch)
        x = gmm.means[comp] + sd * rng.standard_normal((batch, d))
        d2 = gmm._sq_dists(x)
        log_ratio = (gamma * _lse_gauss(gmm._log_w, d2, gmm.component_variance, d)
                     - log_M - _lse_gauss(prop._log_w, d2, prop.component_variance, d))
        if reward is not None:
            log_ratio = log_ratio + reward.value(x)
        if np.max(log_ratio) > 1e-9:
            raise EnvelopeViolation(f"rejection envelope violated: log ratio {np.max(log_ratio):.3g}")
        keep = np.log(rng.uniform(size=batch)) < log_ratio
        out.append(x[keep])
        accepted += int(keep.sum())
        total += batch
        if total >= max_proposals and accepted < n:
            raise RuntimeError(f"rejection sampler accepted {accepted} of {total} proposals")
    rate = accepted / total
    if rate < 1e-6:
        warnings.warn(f"rejection acceptance rate {rate:.2e} is below 1e-6", AcceptanceCollapseWarning)
    log.info("rejection sampler acceptance rate %.3g", rate)
    return np.concatenate(out)[:n]


def posterior_gmm(gmm: GmmSpec, reward: QuadraticReward) -> GmmSpec:
    """Closed-form ``p(x) exp(r(x))`` for an isotropic GMM and quadratic reward."""
    v, s = gmm.component_variance, reward.scale
    post_var = 1.0 / (1.0 / v + 1.0 / s)
    means = post_var * (gmm.means / v + reward.center / s)
    d2 = np.sum((gmm.means - reward.center) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights) - 0.5 * d2 / (s + v)
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    return GmmSpec(means, post_var, w)


def snis_posterior_samples(gmm: GmmSpec, reward: QuadraticReward, n, seed=0):
    """Prior samples with self-normalised weights ``exp(r)``."""
    x = sample_gmm(gmm, n, seed)
    lw = reward.value(x)
    return x, np.exp(lw - logsumexp(lw))


@dataclass(frozen=True)
class LangevinConfig:
    dt: float = 1e-3
    friction: float = 0.5
    temperature: float = 1.0
    burn_in: int = 100_000
    thin: int = 100
    seed: int = 0
    mass: float = 1.0
    energy_ceiling: float = 1e8
    remove_com: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.friction > 0:
            raise ValueError("friction must be positive")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("thin must be >= 1 and burn_in >= 0")


def _center(v):
    return v - v.mean(axis=-2, keepdims=True)


def baoab_sample(force: Callable, x0, cfg: LangevinConfig, n, energy: Optional[Callable] = None):
    """Underdamped Langevin with the kick/drift/OU/drift/kick splitting.

    ``x0`` has shape ``(chains, *state)``; chains advance together and each
    contributes ``ceil(n / chains)`` thinned samples.  With ``remove_com`` the
    state is ``(particles, dim)`` and velocities are kept centred.
    Returns ``(n, *state)``.
    """
    rng = np.random.default_rng(cfg.seed)
    x = np.array(x0, dtype=float)
    if x.ndim < 2:
        raise ValueError("x0 needs a leading chain axis")
    dt, m, T = cfg.dt, cfg.mass, cfg.temperature
    c1 = np.exp(-cfg.friction * dt)
    c2 = np.sqrt(T * (1.0 - c1 * c1) / m)
    v = np.sqrt(T / m) * rng.standard_normal(x.shape)
    if cfg.remove_com:
        x, v = _center(x), _center(v)
    f = force(x)
    samples = []
    per_chain = -(-n // x.shape[0])
    total = cfg.burn_in + per_chain * cfg.thin
    for i in range(1, total + 1):
        v += 0.5 * dt * f / m
        x += 0.5 * dt * v
        xi = rng.standard_normal(x.shape)
        if cfg.remove_com:
            xi = _center(xi)
        v = c1 * v + c2 * xi
        x += 0.5 * dt * v
        f = force(x)
        v += 0.5 * dt * f / m
        if i > cfg.burn_in and (i - cfg.burn_in) % cfg.thin == 0:
            if not np.all(np.isfinite(x)) or (energy is not None and np.max(energy(x)) > cfg.energy_ceiling):
                raise LangevinDivergence(f"energy exceeded {cfg.energy_ceiling} at step {i}")
            samples.append(x.copy())
    out = np.stack(samples, axis=1)
    return out.reshape((-1,) + x.shape[1:])[:n]


def dw4_initial(spec: DoubleWellSpec, chains=1, seed=0, jitter=0.1):
    """Perturbed square lattice with side ``d0``, centre of mass removed."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(spec.n_particles)))
    grid = np.array([(i % side, i // side) for i in range(spec.n_particles)], dtype=float) * spec.d0
    if spec.dim != 2:
        grid = np.pad(grid, ((0, 0), (0, spec.dim - 2)))
    x = grid[None] + jitter * rng.standard_normal((chains, spec.n_particles, spec.dim))
    return _center(x)


def baoab_dw4(spec: DoubleWellSpec, n, cfg: Optional[LangevinConfig] = None, chains=16):
    cfg = cfg or LangevinConfig(dt=1e-3, temperature=spec.temperature, remove_com=True)
    x0 = dw4_initial(spec, chains, cfg.seed)
    return baoab_sample(lambda x: dw4_potential_force(spec, x), x0, cfg, n,
                        energy=lambda x: dw4_potential(spec, x) / spec.temperature)


def spec_hash(payload: dict) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return {"shape": list(o.shape), "sha": hashlib.sha256(np.ascontiguousarray(o, dtype=float).tobytes()).hexdigest()}
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))
    blob = json.dumps(payload, sort_keys=True, default=default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_samples_csv(path, x, weights=None):
    x = np.asarray(x, dtype=float)
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, dtype=float)
    header = ",".join([f"x{i}" for i in range(x.shape[1])] + ["weight"])
    tmp = f"{path}.tmp"
    np.savetxt(tmp, np.column_stack([x, w]), delimiter=",", header=header, comments="", fmt="%.17g")
    os.replace(tmp, path)


def read_samples_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]


def cached_reference(cache_dir, kind, payload: dict, seed, generate: Callable):
    """Return ``(points, weights, path, hit)``; ``generate()`` runs only on a miss."""
    os.makedirs(cache_dir, exist_ok=True)
    key = spec_hash({"kind": kind, "seed": seed, **payload})
    path = os.path.join(cache_dir, f"{kind}_{key}_seed{seed}.csv")
    if os.path.exists(path):
        x, w = read_samples_csv(path)
        return x, w, path, True
    out = generate()
    x, w = out if isinstance(out, tuple) else (out, None)
    write_samples_csv(path, x, w)
    x, w = read_samples_csv(path)
    return x, w, path, False


def gaussian_logpdf(x, mean, var):
    x = np.atleast_2d(x)
    d = x.shape[1]
    return -0.5 * (np.sum((x - mean) ** 2, axis=1) / var + d * (LOG_2PI + np.log(var)))
