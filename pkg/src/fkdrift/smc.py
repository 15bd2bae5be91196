"""Weighted-particle engine: guided transport, reweighting, control and resampling.

Randomness is drawn from per-step generators keyed by
``(seed, round, step, stream)`` so that methods sharing a seed consume the
same Gaussian increments regardless of which optional terms they switch on.
"""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import control as ctl
from .guidance import (
    basis_potentials,
    build_context,
    control_drift,
    ecg_basis,
    guided_drift,
    potential_G,
    vcg_basis,
)
from .schedule import DiffusionSchedule, TimeGrid, build_time_grid
from .targets import TargetSpec

# generator streams
NOISE, RESAMPLE, PROBES, BASIS, INIT = range(5)
INIT_MODES = ("prior", "annealed_prior")


class NumericalFailure(RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


class Method(str, enum.Enum):
    PG = "PG"
    GSMC = "GSMC"
    VCG = "VCG"
    VCG_SMC = "VCG_SMC"
    ECG = "ECG"
    ECG_SMC = "ECG_SMC"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        key = {"G_SMC": "GSMC"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown method {value!r}; choose from {[m.value for m in cls]}") from None

    @property
    def weighted(self):
        return self is not Method.PG

    @property
    def resampling(self):
        return self in (Method.GSMC, Method.VCG_SMC, Method.ECG_SMC)

    @property
    def control_mode(self):
        if self in (Method.VCG, Method.VCG_SMC):
            return "VCG"
        if self in (Method.ECG, Method.ECG_SMC):
            return "ECG"
        return None


@dataclass
class EngineConfig:
    method: Method = Method.VCG_SMC
    N: int = 8192
    steps: int = 500
    ess_threshold: float = 0.9
    resample_period: Optional[int] = None
    seed: int = 0
    deterministic: bool = True
    ridge: float = 1e-6
    hutchinson_probes: int = 0
    extra_bases: Sequence[str] = ()
    # switches for the method lattice
    zero_theta: bool = False
    zero_potential: bool = False
    resample: Optional[bool] = None
    max_nonfinite_fraction: float = 0.01
    init: str = "prior"

    def __post_init__(self):
        self.method = Method.parse(self.method)
        if not 0 < self.ess_threshold <= 1:
            raise ValueError(f"ess_threshold must lie in (0, 1], got {self.ess_threshold}")
        if int(self.N) < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")
        if self.resample_period is not None and int(self.resample_period) < 1:
            raise ValueError("resample_period must be a positive count")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        self.N = int(self.N)
        self.extra_bases = tuple(self.extra_bases)

    @property
    def resampling_enabled(self):
        return self.method.resampling if self.resample is None else bool(self.resample)


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    log_weights: np.ndarray
    step_index: int = 0

    @property
    def N(self):
        return self.positions.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def copy(self):
        return ParticleEnsemble(self.positions.copy(), self.log_weights.copy(), self.step_index)


@dataclass
class RunTrace:
    t: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    var_phi: list = field(default_factory=list)
    var_g: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    resampled: list = field(default_factory=list)
    parents: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0

    def __len__(self):
        return len(self.t)

    def rows(self):
        for k in range(len(self)):
            yield {
                "step": k,
                "t": float(self.t[k]),
                "sigma": float(self.sigma[k]),
                "ess": float(self.ess[k]),
                "var_phi": float(self.var_phi[k]),
                "theta": [float(v) for v in self.theta[k]],
                "resampled": bool(self.resampled[k]),
            }

    def mid_window(self):
        """Step slice ``[M/4, 3M/4)`` used for mid-trajectory summaries."""
        M = len(self)
        return slice(M // 4, (3 * M) // 4)

    def median_mid(self, name="var_phi"):
        return float(np.median(np.asarray(getattr(self, name))[self.mid_window()]))


def step_rng(seed, round_index, k, stream):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(round_index), int(k), stream)))


def init_ensemble(config: EngineConfig, sched: DiffusionSchedule, target: TargetSpec, round_index=0):
    """Uniformly weighted particles at ``t = 0``.

    ``init="prior"`` draws ``N(0, sigma_max^2 I)``.  ``init="annealed_prior"``
    draws exactly from ``q_0 ∝ p_{sigma_max}^gamma`` by rejection, which is
    only available for Gaussian-mixture bases.
    """
    rng = step_rng(config.seed, round_index, 0, INIT)
    if config.init == "annealed_prior":
        from .reference import sample_annealed_gmm
        from .targets import GmmSpec

        base = target.base
        if not isinstance(base, GmmSpec):
            raise ValueError("annealed_prior initialisation needs a Gaussian-mixture base")
        q0 = GmmSpec(base.means, base.component_variance + sched.sigma_max ** 2, base.weights)
        x = sample_annealed_gmm(q0, target.gamma, config.N, seed=int(rng.integers(2 ** 63)))
    else:
        x = sched.sigma_max * rng.standard_normal((config.N, target.dim))
    return ParticleEnsemble(x, np.full(config.N, -np.log(config.N)), 0)


def normalize_log_weights(logw):
    return logw - logsumexp(logw)


def ess(log_weights):
    """Effective sample size as a fraction of ``N``."""
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - logsumexp(lw))
    return float(1.0 / (len(w) * np.sum(w * w)))


def systematic_indices(weights, u):
    """Parents chosen at CDF points ``u + i/N``; ``u`` must lie in ``[0, 1/N)``."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if not 0 <= u < 1.0 / n:
        raise ValueError("u must lie in [0, 1/N)")
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, u + np.arange(n) / n, side="right")
    return np.minimum(idx, n - 1)


def resample_systematic(ens: ParticleEnsemble, rng):
    u = rng.uniform() / ens.N
    idx = systematic_indices(np.exp(ens.log_weights), u)
    out = ParticleEnsemble(ens.positions[idx], np.full(ens.N, -np.log(ens.N)), ens.step_index)
    return out, idx


def weighted_var(w, v):
    m = w @ v
    return float(w @ (v - m) ** 2)


def _bases(ctx, mode, config, target, rng_factory):
    if mode == "VCG":
        return vcg_basis(ctx)
    rng = rng_factory(BASIS) if config.extra_bases else None
    return ecg_basis(ctx, config.extra_bases, model=target.base, rng=rng)


def step(ens: ParticleEnsemble, k: int, grid: TimeGrid, target: TargetSpec, sched: DiffusionSchedule,
         config: EngineConfig, theta_bar=None, round_index=0, trace: Optional[RunTrace] = None):
    """Advance the ensemble from ``t_k`` to ``t_{k+1}``.

    Returns ``(ensemble, theta_new)`` where ``theta_new`` is the coefficient
    solved at this step (excluding ``theta_bar``).
    """
    if not 0 <= k < grid.M:
        raise ValueError(f"step index {k} outside [0, {grid.M})")
    method = config.method
    mode = method.control_mode
    t, dt = float(grid.steps[k]), float(grid.steps[k + 1] - grid.steps[k])

    def rng_for(stream):
        return step_rng(config.seed, round_index, k, stream)

    x = ens.positions
    ctx = build_context(
        target, sched, t, x,
        need_logp=(mode == "ECG"),
        hutchinson_probes=config.hutchinson_probes,
        rng=rng_for(PROBES),
    )
    w = np.exp(ens.log_weights)
    g = potential_G(ctx)
    drift = guided_drift(ctx)

    theta_new = np.zeros(0)
    phi = g
    if mode is not None:
        basis = _bases(ctx, mode, config, target, rng_for)
        H = basis_potentials(ctx, basis)
        tb = np.zeros(basis.n) if theta_bar is None else np.asarray(theta_bar, dtype=float)
        if tb.shape != (basis.n,):
            raise ValueError(f"theta_bar has shape {tb.shape}, expected ({basis.n},)")
        g_eff = g + H @ tb if theta_bar is not None else g
        if config.zero_theta:
            theta_new = np.zeros(basis.n)
        else:
            live = np.isfinite(ens.log_weights)
            if mode == "VCG":
                sys = ctl.assemble_vcg(w[live], g_eff[live], H[live], ridge=config.ridge)
            else:
                sys = ctl.assemble_ecg(w[live], g_eff[live], basis.scalars[:, live],
                                       basis.vectors[:, live], ridge=config.ridge)
            theta_new = ctl.solve_regularized(sys)
            if sys.warning and trace is not None:
                trace.warnings.append({"step": k, "message": sys.warning})
        theta_tot = tb + theta_new
        if theta_bar is not None or np.any(theta_tot):
            phi = g + H @ theta_tot
            drift = drift + control_drift(basis, theta_tot)
    else:
        theta_tot = np.zeros(0)

    logw = ens.log_weights
    if method.weighted and not config.zero_potential:
        logw = normalize_log_weights(logw + phi * dt)
    ess_pre = ess(logw)

    z = rng_for(NOISE).standard_normal(x.shape)
    new_x = x + drift * dt + ctx.V * np.sqrt(dt) * z

    bad = ~np.all(np.isfinite(new_x), axis=1) | np.isnan(logw)
    if np.any(bad):
        frac = bad.mean()
        if frac > config.max_nonfinite_fraction:
            raise NumericalFailure(k, f"{bad.sum()} of {len(bad)} particles became non-finite")
        new_x[bad] = x[bad]
        logw = logw.copy()
        logw[bad] = -np.inf
        logw = normalize_log_weights(logw)
        if trace is not None:
            trace.warnings.append({"step": k, "message": f"{int(bad.sum())} particles removed as non-finite"})

    out = ParticleEnsemble(new_x, logw, k + 1)
    do_resample = False
    if config.resampling_enabled:
        do_resample = ess_pre < config.ess_threshold
        if config.resample_period and (k + 1) % int(config.resample_period) == 0:
            do_resample = True
    if do_resample:
        out, parents = resample_systematic(out, rng_for(RESAMPLE))
        out.step_index = k + 1
    if trace is not None:
        trace.t.append(t)
        trace.sigma.append(ctx.sigma)
        trace.ess.append(ess_pre)
        live = np.isfinite(ens.log_weights)
        trace.var_g.append(weighted_var(w[live], g[live]))
        trace.var_phi.append(weighted_var(w[live], phi[live]))
        trace.theta.append(np.array(theta_tot, dtype=float))
        trace.resampled.append(do_resample)
        if do_resample:
            trace.parents[k] = parents
    return out, theta_new


def run(config: EngineConfig, sched: DiffusionSchedule, target: TargetSpec, theta_bar=None,
        round_index=0, grid: Optional[TimeGrid] = None):
    """Simulate the full grid; returns ``(ensemble, trace, theta_new)``.

    ``theta_bar`` (shape ``(M, n)``) is a fixed control absorbed into drift and
    potential; the per-step solves then fit only the remaining correction.
    """
    grid = grid or build_time_grid(sched, config.steps)
    start = time.perf_counter()
    ens = init_ensemble(config, sched, target, round_index)
    trace = RunTrace()
    solved = []
    for k in range(grid.M):
        tb = None if theta_bar is None else theta_bar[k]
        ens, th = step(ens, k, grid, target, sched, config, tb, round_index, trace)
        solved.append(th)
    trace.wall_time = time.perf_counter() - start
    for w in trace.warnings:
        warnings.warn(f"step {w['step']}: {w['message']}", RuntimeWarning, stacklevel=2)
    return ens, trace, np.array(solved)


def final_samples(ens: ParticleEnsemble, config: EngineConfig):
    """Positions and normalised weights; plain guidance reports equal weights."""
    if config.method is Method.PG:
        live = np.isfinite(ens.log_weights)
        w = live / live.sum()
        return ens.positions, w.astype(float)
    return ens.positions, np.exp(ens.log_weights)


def refine(config: EngineConfig, sched: DiffusionSchedule, target: TargetSpec, rounds: int,
           grid: Optional[TimeGrid] = None):
    """Repeated passes with cumulative per-step coefficients.

    Returns ``(final ensemble, traces, ControlState)``.
    """
    if config.method.control_mode is None:
        raise ValueError("refinement needs a controlled method")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    grid = grid or build_time_grid(sched, config.steps)
    traces = []
    state = None
    ens = None
    for j in range(rounds):
        theta_bar = None if state is None else state.cumulative
        ens, trace, solved = run(config, sched, target, theta_bar=theta_bar, round_index=j, grid=grid)
        if state is None:
            state = ctl.ControlState(grid.M, solved.shape[1])
        state.theta = solved
        state.absorb()
        traces.append(trace)
    return ens, traces, state
