"""Identification of linear SDE models from noisy samples.

Estimators: Bayesian optimization of the Kalman-filter log-likelihood with a
kernel-ensemble GP surrogate, expectation-maximization, and direct
maximum likelihood.  Filter consistency is judged with NEES/NIS statistics.
"""

from .model import ContinuousModel, DiscreteModel, discretize, params_to_discrete
from .simulate import Trajectory, simulate
from .kalman import log_likelihood, rts_smooth
from .harness import SCENARIOS, estimate, run_study

__all__ = [
    "ContinuousModel",
    "DiscreteModel",
    "discretize",
    "params_to_discrete",
    "Trajectory",
    "simulate",
    "log_likelihood",
    "rts_smooth",
    "SCENARIOS",
    "estimate",
    "run_study",
]

__version__ = "0.1.0"
