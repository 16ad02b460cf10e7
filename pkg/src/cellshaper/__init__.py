"""cellshaper: joint antenna tilt / beamwidth optimization for cellular
networks with ground users and UAV corridors.

Layers, bottom up: ``antenna`` (sector pattern math), ``scenario``
(topology and user drops), ``propagation`` (omni channel gain providers),
``simulator`` (SINR/rate evaluation and the sum-log-rate objective),
``gp`` (Gaussian-process surrogate), ``turbo`` (trust-region Bayesian
optimization), ``harness`` (experiments, transfer learning) and ``cli``.

The per-evaluation gain kernels have a compiled (Cython) and a pure-numpy
implementation; ``kernel_backend()`` reports which one is active.
"""

from ._kernels import backend_name as kernel_backend
from .gp import Dataset, GPHyperparams, fit_hyperparams, posterior, thompson_sample
from .propagation import AnalyticGainProvider, AnalyticParams, GainMapProvider
from .scenario import (Scenario, UserDrop, apply_config, baseline_config,
                       generate_synthetic_scenario, load_scenario, sample_users,
                       save_scenario)
from .simulator import EvalReport, SimParams, evaluate
from .turbo import TurboConfig, TurboResult, optimize

__version__ = "0.1.0"

__all__ = [
    "AnalyticGainProvider", "AnalyticParams", "Dataset", "EvalReport",
    "GainMapProvider", "GPHyperparams", "Scenario", "SimParams", "TurboConfig",
    "TurboResult", "UserDrop", "apply_config", "baseline_config", "evaluate",
    "fit_hyperparams", "generate_synthetic_scenario", "kernel_backend",
    "load_scenario", "optimize", "posterior", "sample_users", "save_scenario",
    "thompson_sample",
]
