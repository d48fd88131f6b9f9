"""Sojourn-time asymptotics and Berman constants for self-similar Gaussian processes."""

from .kernels import Family, KernelSpec, ParameterError, covariance, fbm, meta, variance, variogram
from .sampler import GridSpec, PathBatch, draw_paths, draw_risk_x
from .sojourn import TrendSpec, WeightSpec, sojourn_time
from .berman import BermanQuery, DomainError, DriftSpec, critical_level, estimate_berman
from .asymptotics import RegimeInput, approximate_probability, classify, constant, example_constant, psi
from .harness import ExperimentConfig, estimate_ruin_crude, estimate_ruin_is, run_config

__version__ = "0.1.0"

__all__ = [
    "Family", "KernelSpec", "ParameterError", "covariance", "fbm", "meta", "variance", "variogram",
    "GridSpec", "PathBatch", "draw_paths", "draw_risk_x", "TrendSpec", "WeightSpec", "sojourn_time",
    "BermanQuery", "DomainError", "DriftSpec", "critical_level", "estimate_berman",
    "RegimeInput", "approximate_probability", "classify", "constant", "example_constant", "psi",
    "ExperimentConfig", "estimate_ruin_crude", "estimate_ruin_is", "run_config",
]
