"""Ramsey measurement model with decaying fringe visibility.

All simulation work is done in the phase ``phi = 2 * gamma * B * tau`` on
``(-pi, pi]``; the field conversions below are only needed at the edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MeasurementModel:
    """Single-spin Ramsey detection with visibility ``f_d * exp(-2**k tau / T2)``.

    Parameters
    ----------
    f_d : float
        Initial fringe visibility, in (0, 1].
    t2_over_tau : float
        Coherence time in units of the base interaction time. ``math.inf``
        switches decay off.
    tau : float
        Base interaction time. Only used for field conversions.
    """

    f_d: float = 1.0
    t2_over_tau: float = math.inf
    tau: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.f_d <= 1.0):
            raise ValueError(f"f_d must lie in [0, 1], got {self.f_d}")
        if not self.t2_over_tau > 0:
            raise ValueError(f"t2_over_tau must be positive, got {self.t2_over_tau}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def visibility(self, k: int) -> float:
        return decayed_visibility(self, k)

    def probability(self, u, phi, theta, k: int):
        return outcome_probability(self, u, phi, theta, k)

    def sample(self, phi, theta, k: int, draw):
        return sample_outcome(self, phi, theta, k, draw)


@dataclass(frozen=True)
class Detection:
    """One recorded detection: outcome ``u``, stage ``k`` and control phase."""

    u: int
    k: int
    theta: float

    def __post_init__(self):
        if self.u not in (1, -1):
            raise ValueError(f"outcome must be +1 or -1, got {self.u}")
        if self.k < 0:
            raise ValueError(f"stage must be nonnegative, got {self.k}")
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)


def decayed_visibility(model: MeasurementModel, k: int) -> float:
    if k < 0:
        raise ValueError(f"stage must be nonnegative, got {k}")
    if math.isinf(model.t2_over_tau):
        return float(model.f_d)
    return model.f_d * math.exp(-(2.0**k) / model.t2_over_tau)


def outcome_probability(model: MeasurementModel, u, phi, theta, k: int):
    """Probability of outcome ``u`` (+1 or -1) for true phase ``phi``.

    Broadcasts over array arguments.
    """
    vis = decayed_visibility(model, k)
    return 0.5 * (1.0 + u * vis * np.cos(2.0**k * phi - theta))


def sample_outcome(model: MeasurementModel, phi, theta, k: int, draw):
    """Outcome +1 iff ``draw`` falls below the +1 probability, else -1."""
    p_plus = outcome_probability(model, 1, phi, theta, k)
    if np.ndim(draw) == 0 and np.ndim(p_plus) == 0:
        return 1 if draw < p_plus else -1
    return np.where(np.asarray(draw) < p_plus, 1, -1)


def phase_from_field(field, gamma: float, tau: float):
    if gamma <= 0 or tau <= 0:
        raise ValueError("gamma and tau must be positive")
    return 2.0 * gamma * field * tau


def field_range(gamma: float, tau: float) -> float:
    """Largest field magnitude ``B_max`` resolvable with base time ``tau``."""
    if gamma <= 0 or tau <= 0:
        raise ValueError("gamma and tau must be positive")
    return math.pi / (2.0 * gamma * tau)


def variance_to_dynamic_range(v_h):
    """Convert a Holevo variance into ``Delta B / B_max``."""
    return np.sqrt(v_h) / math.pi


def dynamic_range_to_variance(ratio):
    return math.pi**2 * np.asarray(ratio) ** 2
