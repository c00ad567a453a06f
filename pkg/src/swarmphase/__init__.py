"""Adaptive phase estimation with low-visibility Ramsey interferometry.

Bayesian Fourier-series posteriors, measurement protocols, exact and Monte
Carlo Holevo-variance evaluation, and particle-swarm search for adaptive
decision-tree policies.
"""

from .model import MeasurementModel, Detection, field_range, phase_from_field
from .posterior import FourierPosterior, uniform_prior, bayes_update
from .protocol import (
    Schedule,
    Nonadaptive,
    DecisionTree,
    AdaptiveHomodyne,
    CappellaroUpdate,
    Hybrid,
    run_trial,
)
from .evaluation import (
    VarianceReport,
    exact_variance,
    monte_carlo_variance,
    holevo_lower_bound,
    equal_time_bound,
    curve_sweep,
)
from .pso import SwarmConfig, optimize

__version__ = "0.1.0"

__all__ = [
    "MeasurementModel",
    "Detection",
    "field_range",
    "phase_from_field",
    "FourierPosterior",
    "uniform_prior",
    "bayes_update",
    "Schedule",
    "Nonadaptive",
    "DecisionTree",
    "AdaptiveHomodyne",
    "CappellaroUpdate",
    "Hybrid",
    "run_trial",
    "VarianceReport",
    "exact_variance",
    "monte_carlo_variance",
    "holevo_lower_bound",
    "equal_time_bound",
    "curve_sweep",
    "SwarmConfig",
    "optimize",
]
