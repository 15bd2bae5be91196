"""Guided drift, Feynman-Kac potential and control potentials.

All functions are vectorised over particles: positions are ``(N, d)``,
per-particle scalars ``(N,)``.  Under the variance-exploding schedule the
forward drift vanishes, so ``u`` and ``div_u`` default to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .schedule import DiffusionSchedule
from .targets import TargetSpec


@dataclass
class RewardPack:
    value: np.ndarray
    grad: np.ndarray
    laplacian: np.ndarray
    time_derivative: np.ndarray


@dataclass
class GuidanceContext:
    gamma: float
    sigma: float
    U: float
    V: float
    score: np.ndarray
    score_laplacian: Optional[np.ndarray] = None
    logp: Optional[np.ndarray] = None
    reward: Optional[RewardPack] = None
    u: Optional[np.ndarray] = None
    div_u: Optional[np.ndarray] = None
    positions: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.score.shape[0]

    def target_score(self):
        """``gamma * score + grad r_t``, the score of the path density ``q_t``."""
        s = self.gamma * self.score
        if self.reward is not None:
            s = s + self.reward.grad
        return s


@dataclass
class BasisEval:
    """Evaluated control bases.

    ``vectors[i]`` is the drift direction ``s_i`` (for ECG, ``grad s^i``) and
    ``divergences[i]`` its divergence.  ``scalars`` holds the ECG potentials.
    """

    names: list
    vectors: np.ndarray
    divergences: np.ndarray
    scalars: Optional[np.ndarray] = None

    @property
    def n(self):
        return len(self.names)


def hutchinson_laplacian(score_fn: Callable, x, probes: int, rng, return_samples=False):
    """Unbiased estimate of ``tr(grad score)`` with Rademacher probes.

    Jacobian-vector products use central differences of ``score_fn`` with
    step ``1e-4 (1 + |x|)``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eps = 1e-4 * (1.0 + np.linalg.norm(x, axis=1, keepdims=True))
    samples = np.empty((probes, x.shape[0]))
    for p in range(probes):
        xi = rng.choice(np.array([-1.0, 1.0]), size=x.shape)
        jvp = (np.atleast_2d(score_fn(x + eps * xi)) - np.atleast_2d(score_fn(x - eps * xi))) / (2 * eps)
        samples[p] = np.einsum("nd,nd->n", xi, jvp)
    if single:
        samples = samples[:, 0]
    return samples if return_samples else samples.mean(axis=0)


def build_context(target: TargetSpec, sched: DiffusionSchedule, t: float, x, *,
                  need_logp=False, hutchinson_probes=0, rng=None) -> GuidanceContext:
    """Evaluate every per-particle quantity the engine needs at time ``t``.

    ``hutchinson_probes > 0`` replaces the analytic score Laplacian by the
    stochastic estimate (also used when the base has no analytic Laplacian).
    """
    sigma = sched.noise_level(t)
    base = target.base
    use_hutch = hutchinson_probes > 0 or not base.has_laplacian
    ev = base.evaluate(x, sigma, need_logp=need_logp, need_laplacian=not use_hutch)
    lap = ev.laplacian
    if use_hutch:
        if rng is None:
            raise ValueError("Hutchinson estimation needs an rng")
        lap = hutchinson_laplacian(lambda y: base.score(y, sigma), x,
                                   max(hutchinson_probes, 1), rng)
    reward = None
    if target.has_reward:
        reward = RewardPack(
            value=target.reward_value(t, x),
            grad=target.reward_grad(t, x),
            laplacian=target.reward_laplacian(t, x),
            time_derivative=target.reward_time_derivative(t, x),
        )
    return GuidanceContext(
        gamma=target.gamma, sigma=sigma,
        U=float(sched.forward_diffusion(t)), V=float(sched.backward_diffusion(t)),
        score=ev.score, score_laplacian=lap, logp=ev.logp, reward=reward,
        positions=np.asarray(x, dtype=float),
    )


def guided_drift(ctx: GuidanceContext):
    drift = 0.5 * (ctx.U ** 2 + ctx.V ** 2) * ctx.target_score()
    if ctx.u is not None:
        drift = drift - ctx.u
    return drift


def potential_G(ctx: GuidanceContext):
    """Uncentred reweighting rate; centring is left to weight normalisation."""
    g, U2 = ctx.gamma, ctx.U ** 2
    sq = np.einsum("nd,nd->n", ctx.score, ctx.score)
    G = 0.5 * U2 * (-g * (1.0 - g)) * sq
    if ctx.div_u is not None:
        G = G - (1.0 - g) * ctx.div_u
    if ctx.reward is not None:
        rw = ctx.reward
        inner = g * U2 * ctx.score + 0.5 * U2 * rw.grad
        if ctx.u is not None:
            inner = inner - ctx.u
        G = G + rw.time_derivative + 0.5 * U2 * rw.laplacian + np.einsum("nd,nd->n", rw.grad, inner)
    return G


def vcg_basis(ctx: GuidanceContext) -> BasisEval:
    """Vector bases: reward gradient (if any), score, forward drift (if nonzero)."""
    names, vecs, divs = [], [], []
    if ctx.reward is not None:
        names.append("reward_grad")
        vecs.append(ctx.reward.grad)
        divs.append(np.broadcast_to(ctx.reward.laplacian, (ctx.n,)))
    names.append("score")
    vecs.append(ctx.score)
    divs.append(ctx.score_laplacian)
    if ctx.u is not None and np.any(ctx.u):
        names.append("forward_drift")
        vecs.append(ctx.u)
        divs.append(ctx.div_u)
    return BasisEval(names, np.stack(vecs), np.stack(divs))


def ecg_basis(ctx: GuidanceContext, extra: Sequence[str] = (), model=None, rng=None) -> BasisEval:
    """Scalar bases ``r_t`` and ``log p_t`` with their gradients and Laplacians.

    ``extra`` may request ``"score_norm"`` (``|score|^2``) and/or
    ``"score_projection"`` (``score . xi`` for one Gaussian ``xi`` per step);
    these need ``model`` for finite-difference Hessian-vector products.
    The forward-drift potential is identically zero here and never included.
    """
    names, scal, vecs, divs = [], [], [], []
    if ctx.reward is not None:
        names.append("reward")
        scal.append(ctx.reward.value)
        vecs.append(ctx.reward.grad)
        divs.append(np.broadcast_to(ctx.reward.laplacian, (ctx.n,)))
    if ctx.logp is not None:
        names.append("log_density")
        scal.append(ctx.logp)
        vecs.append(ctx.score)
        divs.append(ctx.score_laplacian)
    for name in extra:
        s, v, dv = _fallback_basis(name, ctx, model, rng)
        names.append(name)
        scal.append(s)
        vecs.append(v)
        divs.append(dv)
    if not names:
        d = ctx.score.shape[1]
        return BasisEval([], np.zeros((0, ctx.n, d)), np.zeros((0, ctx.n)), np.zeros((0, ctx.n)))
    return BasisEval(names, np.stack(vecs), np.stack(divs), np.stack(scal))


def _hvp(model, x, sigma, v):
    eps = 1e-4 * (1.0 + np.linalg.norm(x, axis=1, keepdims=True))
    vn = np.linalg.norm(v, axis=1, keepdims=True)
    vn = np.where(vn > 0, vn, 1.0)
    u = v / vn
    return vn * (model.score(x + eps * u, sigma) - model.score(x - eps * u, sigma)) / (2 * eps)


def _lap_directional(model, x, sigma, v):
    eps = 1e-4 * (1.0 + np.linalg.norm(x, axis=1, keepdims=True))
    vn = np.linalg.norm(v, axis=1, keepdims=True)
    vn = np.where(vn > 0, vn, 1.0)
    u = v / vn
    return vn[:, 0] * (model.score_laplacian(x + eps * u, sigma)
                       - model.score_laplacian(x - eps * u, sigma)) / (2 * eps[:, 0])


def _fallback_basis(name, ctx, model, rng):
    if model is None or not model.has_laplacian:
        raise ValueError(f"basis {name!r} needs a base model with an analytic Laplacian")
    x = ctx.positions
    if x is None:
        raise ValueError("context was built without positions")
    if name == "score_norm":
        s = np.einsum("nd,nd->n", ctx.score, ctx.score)
        Hs = _hvp(model, x, ctx.sigma, ctx.score)
        # lap |score|^2 = 2 |H|_F^2 + 2 score . grad(lap log p); |H|_F^2 by Hutchinson
        fro = np.zeros(ctx.n)
        probes = 8
        for _ in range(probes):
            xi = rng.choice(np.array([-1.0, 1.0]), size=x.shape)
            Hxi = _hvp(model, x, ctx.sigma, xi)
            fro += np.einsum("nd,nd->n", Hxi, Hxi)
        fro /= probes
        lap = 2.0 * fro + 2.0 * _lap_directional(model, x, ctx.sigma, ctx.score)
        return s, 2.0 * Hs, lap
    if name == "score_projection":
        xi = np.broadcast_to(rng.standard_normal(x.shape[1]), x.shape)
        s = ctx.score @ xi[0]
        return s, _hvp(model, x, ctx.sigma, np.array(xi)), _lap_directional(model, x, ctx.sigma, xi)
    raise ValueError(f"unknown basis {name!r}")


def basis_potentials(ctx: GuidanceContext, basis: BasisEval):
    """Per-basis control potentials ``h_i``, shape ``(N, n)``."""
    if basis.n == 0:
        return np.zeros((ctx.n, 0))
    ts = ctx.target_score()
    return (np.einsum("knd,nd->nk", basis.vectors, ts) + basis.divergences.T)


def control_drift(basis: BasisEval, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.n,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({basis.n},)")
    if basis.n == 0:
        return 0.0
    return np.einsum("k,knd->nd", theta, basis.vectors)


def control_potential_h(ctx: GuidanceContext, basis: BasisEval, theta):
    """``(gamma score + grad r_t) . b + div b`` for ``b = sum theta_i s_i``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.n,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({basis.n},)")
    return basis_potentials(ctx, basis) @ theta
