"""One seeded run from a config: target, reference, engine and metrics."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import metrics as mt
from .config import RunConfig
from .reference import cached_reference, posterior_gmm, read_samples_csv, sample_annealed_gmm, sample_gmm
from .smc import Method, RunTrace, final_samples, refine, run
from .targets import TargetSpec


@dataclass
class RunResult:
    method: Method
    seed: int
    positions: np.ndarray
    weights: np.ndarray
    traces: list
    metrics: dict
    theta_cumulative: Optional[np.ndarray] = None

    @property
    def trace(self) -> RunTrace:
        return self.traces[-1]


def default_cache_dir():
    return os.environ.get("FKDRIFT_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "fkdrift"))


def reference_kind(target: TargetSpec):
    if target.reward is None:
        return "annealed_gmm"
    return "posterior_gmm" if target.gamma == 1 else "annealed_tilted_gmm"


def reference_samples(target: TargetSpec, n, seed, cache_dir=None):
    """Exact samples of the final target, cached to CSV by a hash of the target and the seed."""
    base = target.base
    kind = reference_kind(target)
    payload = {"means": base.means, "variance": base.component_variance, "weights": base.weights,
               "gamma": target.gamma, "n": int(n)}
    if target.reward is not None:
        payload.update(center=target.reward.center, scale=target.reward.scale)

    def generate():
        if kind == "annealed_gmm":
            return sample_annealed_gmm(base, target.gamma, n, seed)
        if kind == "posterior_gmm":
            return sample_gmm(posterior_gmm(base, target.reward), n, seed)
        return sample_annealed_gmm(base, target.gamma, n, seed, reward=target.reward)

    x, w, path, _ = cached_reference(cache_dir or default_cache_dir(), kind, payload, seed, generate)
    return x, w, path


def compute_metrics(cfg: RunConfig, target: TargetSpec, x, w, seed, reference=None):
    m = cfg.raw["metrics"]
    if not m["enabled"]:
        return {}
    if reference is None:
        if m["reference"] == "none":
            return {}
        if m["reference"] == "auto":
            rx, rw, _ = reference_samples(target, int(m["reference_size"]),
                                          int(m["reference_seed_offset"]) + seed, m["cache_dir"])
        else:
            rx, rw = read_samples_csv(cfg._resolve(m["reference"]))
        reference = mt.WeightedSamples(rx, rw / rw.sum())
    return mt.evaluate_all(
        mt.WeightedSamples(x, w), reference, target.log_unnormalized,
        bandwidth=float(m["bandwidth"]), features=int(m["features"]), rff_seed=int(m["rff_seed"]),
        projections=int(m["projections"]), swd_seed=int(m["swd_seed"]),
    )


def execute(cfg: RunConfig, seed, method=None, reference=None, **engine_overrides) -> RunResult:
    target = cfg.target(seed)
    sched = cfg.schedule()
    ec = cfg.engine(seed, method)
    for k, v in engine_overrides.items():
        setattr(ec, k, v)
    theta = None
    if cfg.rounds > 1 and ec.method.control_mode is not None:
        ens, traces, state = refine(ec, sched, target, cfg.rounds)
        theta = state.cumulative
    else:
        ens, trace, _ = run(ec, sched, target)
        traces = [trace]
    x, w = final_samples(ens, ec)
    scores = compute_metrics(cfg, target, x, w, seed, reference)
    return RunResult(ec.method, int(seed), x, w, traces, scores, theta)
