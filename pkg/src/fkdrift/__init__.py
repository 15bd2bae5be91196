"""Feynman-Kac diffusion samplers with variance- and energy-controlling drift."""

__version__ = "0.1.0"

from .control import ControlState, ControlSystem, assemble_ecg, assemble_vcg, solve_regularized
from .estimator import DriftSampler
from .guidance import (
    BasisEval,
    GuidanceContext,
    build_context,
    control_potential_h,
    ecg_basis,
    guided_drift,
    hutchinson_laplacian,
    potential_G,
    vcg_basis,
)
from .schedule import DiffusionSchedule, InvalidScheduleError, TimeGrid, build_time_grid
from .smc import EngineConfig, Method, ParticleEnsemble, RunTrace, ess, refine, resample_systematic, run
from .targets import DoubleWellSpec, GmmSpec, QuadraticReward, RewardSchedule, TargetSpec

__all__ = [
    "BasisEval", "ControlState", "ControlSystem", "DiffusionSchedule", "DoubleWellSpec", "DriftSampler",
    "EngineConfig", "GmmSpec", "GuidanceContext", "InvalidScheduleError", "Method", "ParticleEnsemble",
    "QuadraticReward", "RewardSchedule", "RunTrace", "TargetSpec", "TimeGrid", "assemble_ecg",
    "assemble_vcg", "build_context", "build_time_grid", "control_potential_h", "ecg_basis", "ess",
    "guided_drift", "hutchinson_laplacian", "potential_G", "refine", "resample_systematic", "run",
    "solve_regularized", "vcg_basis",
]
