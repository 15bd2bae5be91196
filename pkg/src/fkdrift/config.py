"""Run configuration: a YAML tree with defaults for the mixture experiments."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import yaml

from .schedule import DiffusionSchedule, InvalidScheduleError
from .smc import EngineConfig, Method
from .targets import GmmSpec, QuadraticReward, RewardSchedule, TargetSpec

ALL_METHODS = [m.value for m in Method]

DEFAULTS: dict = {
    "schedule": {"sigma_min": 0.005, "sigma_max": 50.0, "rho": 7.0, "churn": 1.0, "steps": 500},
    "target": {
        "gamma": 1.0,
        # seed: null means every run seed draws its own mixture configuration
        "gmm": {"n_components": 40, "dim": 30, "low": -40.0, "high": 40.0,
                "variance": 50.0, "seed": None, "means_csv": None, "weights": None},
        "reward": None,
    },
    "engine": {
        "method": "VCG_SMC", "methods": None, "N": 8192, "ess_threshold": 0.9,
        "resample_period": None, "seeds": [0], "deterministic": True, "ridge": 1e-6,
        "hutchinson_probes": 0, "extra_bases": [], "rounds": 1, "init": "prior",
    },
    "metrics": {
        "enabled": True, "reference": "auto", "reference_size": 20000, "reference_seed_offset": 10_000,
        "rff_seed": 0, "bandwidth": 20.0, "features": 2048, "projections": 10, "swd_seed": 0,
        "cache_dir": None,
    },
    "output": None,
}

REWARD_DEFAULTS = {"scale": 100.0, "center_variance": 100.0, "seed": None, "center": None,
                   "schedule": "linear"}


class ConfigError(ValueError):
    pass


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    raw: dict
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict, source=None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        if "config" in data and set(data) - {"config"} <= {"meta", "flags", "config_hash", "version"}:
            data = data["config"]
        tree = _merge(DEFAULTS, data)
        reward = tree["target"].get("reward")
        if reward is not None:
            if not isinstance(reward, dict):
                raise ConfigError("target.reward must be a mapping or null")
            tree["target"]["reward"] = _merge(REWARD_DEFAULTS, reward, "target.reward.")
        cfg = cls(tree, source)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        return cls.from_dict(data or {}, source=str(path))

    # accessors ---------------------------------------------------------
    @property
    def seeds(self):
        return [int(s) for s in self.raw["engine"]["seeds"]]

    @property
    def methods(self):
        m = self.raw["engine"]["methods"]
        return [Method.parse(x) for x in (m if m else ALL_METHODS)]

    @property
    def rounds(self):
        return int(self.raw["engine"]["rounds"])

    def validate(self):
        e, t, s, m = self.raw["engine"], self.raw["target"], self.raw["schedule"], self.raw["metrics"]
        seeds = e["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("engine.seeds must be a non-empty list")
        try:
            Method.parse(e["method"])
            for x in e["methods"] or []:
                Method.parse(x)
            self.schedule()
            self.engine(seeds[0])
        except (ValueError, InvalidScheduleError) as exc:
            raise ConfigError(str(exc)) from None
        if int(s["steps"]) < 1:
            raise ConfigError("schedule.steps must be >= 1")
        if self.rounds < 1:
            raise ConfigError("engine.rounds must be >= 1")
        if float(t["gamma"]) < 1:
            raise ConfigError("target.gamma must be >= 1")
        path = t["gmm"]["means_csv"]
        if path is not None and not os.path.exists(self._resolve(path)):
            raise ConfigError(f"means_csv not found: {path}")
        ref = m["reference"]
        if ref not in ("auto", "none") and not os.path.exists(self._resolve(ref)):
            raise ConfigError(f"reference CSV not found: {ref}")
        if int(m["features"]) % 2:
            raise ConfigError("metrics.features must be even")

    def _resolve(self, path):
        if os.path.isabs(path) or self.source is None:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.source)), path)

    # builders ----------------------------------------------------------
    def schedule(self) -> DiffusionSchedule:
        s = self.raw["schedule"]
        return DiffusionSchedule(float(s["sigma_min"]), float(s["sigma_max"]), float(s["rho"]), float(s["churn"]))

    def engine(self, seed, method=None) -> EngineConfig:
        e = self.raw["engine"]
        return EngineConfig(
            method=method or e["method"], N=int(e["N"]), steps=int(self.raw["schedule"]["steps"]),
            ess_threshold=float(e["ess_threshold"]), resample_period=e["resample_period"],
            seed=int(seed), deterministic=bool(e["deterministic"]), ridge=float(e["ridge"]),
            hutchinson_probes=int(e["hutchinson_probes"]), extra_bases=tuple(e["extra_bases"] or ()),
            init=e["init"],
        )

    def gmm(self, seed) -> GmmSpec:
        g = self.raw["target"]["gmm"]
        if g["means_csv"]:
            return GmmSpec.from_csv(self._resolve(g["means_csv"]), float(g["variance"]), g["weights"])
        gseed = seed if g["seed"] is None else int(g["seed"])
        base = GmmSpec.random(int(g["n_components"]), int(g["dim"]), float(g["low"]), float(g["high"]),
                              float(g["variance"]), seed=gseed)
        if g["weights"] is not None:
            base = GmmSpec(base.means, base.component_variance, g["weights"])
        return base

    def reward(self, seed, dim) -> Optional[QuadraticReward]:
        r = self.raw["target"]["reward"]
        if r is None:
            return None
        if r["center"] is not None:
            return QuadraticReward(np.asarray(r["center"], dtype=float), float(r["scale"]))
        rseed = seed + 1 if r["seed"] is None else int(r["seed"])
        return QuadraticReward.random(dim, float(r["scale"]), float(r["center_variance"]), seed=rseed)

    def target(self, seed) -> TargetSpec:
        base = self.gmm(seed)
        reward = self.reward(seed, base.dim)
        rs = None
        if reward is not None:
            rs = RewardSchedule(self.schedule().horizon, self.raw["target"]["reward"]["schedule"])
        return TargetSpec(base, float(self.raw["target"]["gamma"]), reward, rs)

    # serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **engine) -> "RunConfig":
        raw = self.to_dict()
        raw["engine"].update(engine)
        return RunConfig.from_dict(raw, self.source)


def design_flags(cfg: RunConfig) -> dict[str, Any]:
    e = cfg.raw["engine"]
    return {
        "schedule": "variance_exploding",
        "moment_centering": True,
        "ridge": float(e["ridge"]),
        "ridge_scaling": "trace_over_n",
        "ecg_rhs": "centered_g",
        "resampling": "systematic",
        "ess_threshold": float(e["ess_threshold"]),
        "resample_period": e["resample_period"],
        "laplacian": "hutchinson" if int(e["hutchinson_probes"]) > 0 else "analytic",
        "hutchinson_probes": int(e["hutchinson_probes"]),
        "init": e["init"],
        "reward_schedule": "linear",
        "mmd_report": "raw_squared",
        "pg_output_weights": "equal",
        "final_denoising_step": False,
        "rng_streams": "per_step_seed_sequence",
    }
