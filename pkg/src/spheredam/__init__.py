"""Monte Carlo phase maps for dense associative memories on the N-sphere."""

from .energy import EnergyValue, KernelSpec
from .geometry import PatternSet, SphereState
from .oracle import OracleSpec, QuadratureError, phi_eq, phi_eq_curve
from .sampler import TrialConfig, TrialResult, TrialSetupError, run_trial, run_trial_batch

__version__ = "0.1.0"

__all__ = [
    "EnergyValue",
    "KernelSpec",
    "OracleSpec",
    "PatternSet",
    "QuadratureError",
    "SphereState",
    "TrialConfig",
    "TrialResult",
    "TrialSetupError",
    "phi_eq",
    "phi_eq_curve",
    "run_trial",
    "run_trial_batch",
    "__version__",
]
