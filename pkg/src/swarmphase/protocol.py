"""Measurement schedules, control-phase policies and trial execution.

A schedule runs stages ``k = K, K-1, ..., 0`` with interaction time ``2**k tau``
and ``M_k = G + F (K - k)`` detections per stage. A policy picks the control
phase before every detection.

Policies are written against batches: every call receives arrays with one
entry per trial (or per enumeration branch), so the same code drives the
scalar reference path, the Monte Carlo engine and exact enumeration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numba
import numpy as np

from .model import MeasurementModel, decayed_visibility
from .posterior import TWO_PI, bayes_update, phase_estimate, uniform_prior

POLICY_FORMAT = "swarmphase-policy"
POLICY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Schedule:
    """Exponentially shrinking interaction times with ``M_k = G + F (K - k)``."""

    K: int
    G: int
    F: int = 0

    def __post_init__(self):
        for name in ("K", "G", "F"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValueError(f"{name} must be an integer")
        if self.K < 0:
            raise ValueError(f"K must be nonnegative, got {self.K}")
        if self.G < 1:
            raise ValueError(f"G must be positive, got {self.G}")
        if self.F < 0:
            raise ValueError(f"F must be nonnegative, got {self.F}")

    def detections_at_stage(self, k: int) -> int:
        if not 0 <= k <= self.K:
            raise ValueError(f"stage {k} outside 0..{self.K}")
        return self.G + self.F * (self.K - k)

    def total_time(self) -> int:
        """Total interaction time ``N = T / tau``."""
        return self.G * (2 ** (self.K + 1) - 1) + self.F * (2 ** (self.K + 1) - 2 - self.K)

    @property
    def stages(self) -> range:
        return range(self.K, -1, -1)

    @cached_property
    def sequence(self) -> tuple:
        """``(k, m)`` for every detection, in execution order."""
        return tuple((k, m) for k in self.stages for m in range(self.detections_at_stage(k)))

    @property
    def num_detections(self) -> int:
        return len(self.sequence)

    @property
    def num_parameters(self) -> int:
        """Length of a decision-tree increment vector: two per detection."""
        return 2 * self.num_detections

    @cached_property
    def reach(self) -> np.ndarray:
        """``reach[d]`` = sum of ``2**k`` over detections ``d`` onward (``reach[D] = 0``).

        Coefficients with index above ``1 + reach[d]`` cannot feed back into
        ``b_1`` from detection ``d`` on, so they are never needed.
        """
        steps = np.array([1 << k for k, _ in self.sequence] + [0], dtype=np.int64)
        return np.cumsum(steps[::-1])[::-1]


# --------------------------------------------------------------------------
# policies


@dataclass
class PolicyState:
    """What a policy may look at before choosing the next control phase.

    ``theta`` and ``u_prev`` hold one entry per trial. ``u_prev`` is ``None``
    before the first detection of a run. ``coeff(w)`` returns ``b_w`` of the
    current posterior for ``w >= 0``.
    """

    index: int
    k: int
    m: int
    theta: np.ndarray
    u_prev: Optional[np.ndarray]
    coeff: Callable[[int], np.ndarray]

    @property
    def first(self) -> bool:
        return self.index == 0


# Coefficients are normalised so b_0 = 1/(2 pi); anything this small is a
# symmetry zero polluted by rounding, and its argument would be noise.
TIE_TOLERANCE = 1e-13


def _arg_neg(c):
    """``arg(b_{-w})`` from stored ``b_w``, with ties (``b_w`` ~ 0) mapped to 0."""
    c = np.asarray(c)
    return np.where(np.abs(c) > TIE_TOLERANCE, np.angle(np.conj(c)), 0.0)


class Policy:
    variant = "abstract"
    has_parameters = False

    def control_phase(self, schedule: Schedule, state: PolicyState) -> np.ndarray:
        raise NotImplementedError

    def check_schedule(self, schedule: Schedule) -> None:
        pass


class Nonadaptive(Policy):
    """Predetermined phases ``pi * m / M_k`` within each stage."""

    variant = "nonadaptive"

    def control_phase(self, schedule, state):
        theta = math.pi * state.m / schedule.detections_at_stage(state.k)
        return np.full(np.shape(state.theta), theta % TWO_PI)

    def __eq__(self, other):
        return type(other) is type(self)

    def __repr__(self):
        return "Nonadaptive()"


class AdaptiveHomodyne(Policy):
    """Control phase = running estimate of ``2**k phi`` plus ``pi/2``.

    At the first detection of a stage ``b_{2^k}`` is structurally zero, so the
    estimate is taken as half the coarser-stage estimate instead.
    """

    variant = "homodyne"

    def control_phase(self, schedule, state):
        if state.first:
            return np.zeros(np.shape(state.theta))
        if state.m == 0:
            est = 0.5 * _arg_neg(state.coeff(1 << (state.k + 1)))
        else:
            est = _arg_neg(state.coeff(1 << state.k))
        return (est + 0.5 * math.pi) % TWO_PI

    def __eq__(self, other):
        return type(other) is type(self)

    def __repr__(self):
        return "AdaptiveHomodyne()"


class CappellaroUpdate(Policy):
    """Reset to ``arg(b_{-2^{k+1}}) / 2`` when the interaction time halves."""

    variant = "cappellaro"

    def control_phase(self, schedule, state):
        if state.first:
            return np.zeros(np.shape(state.theta))
        if state.m == 0:
            return (0.5 * _arg_neg(state.coeff(1 << (state.k + 1)))) % TWO_PI
        return np.asarray(state.theta, dtype=float)

    def __eq__(self, other):
        return type(other) is type(self)

    def __repr__(self):
        return "CappellaroUpdate()"


class DecisionTree(Policy):
    """Outcome-dependent phase increments, one pair per detection.

    ``increments[d, 0]`` is added after detection ``d`` returns +1 and
    ``increments[d, 1]`` after it returns -1. Rows follow
    :attr:`Schedule.sequence`. The increment after the final detection is
    never used but is kept so the vector length is exactly ``2 * sum M_k``.
    """

    variant = "decision_tree"
    has_parameters = True

    def __init__(self, schedule: Schedule, increments):
        arr = np.asarray(increments, dtype=float)
        expected = schedule.num_parameters
        if arr.size != expected:
            raise ValueError(f"expected {expected} increments for {schedule}, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("increments must be finite")
        self.schedule = schedule
        self.increments = np.mod(arr.reshape(-1, 2), TWO_PI)
        self.increments.setflags(write=False)

    def check_schedule(self, schedule):
        if schedule != self.schedule:
            raise ValueError(f"policy built for {self.schedule}, run with {schedule}")

    def _stepped(self, state):
        inc = self.increments[state.index - 1]
        step = np.where(np.asarray(state.u_prev) > 0, inc[0], inc[1])
        return (np.asarray(state.theta, dtype=float) + step) % TWO_PI

    def control_phase(self, schedule, state):
        if state.first:
            return np.zeros(np.shape(state.theta))
        return self._stepped(state)

    def to_vector(self) -> np.ndarray:
        return self.increments.ravel().copy()

    def __eq__(self, other):
        return (
            type(other) is type(self)
            and other.schedule == self.schedule
            and np.array_equal(other.increments, self.increments)
        )

    def __repr__(self):
        return f"{type(self).__name__}({self.schedule}, <{self.increments.size} increments>)"


class Hybrid(DecisionTree):
    """Cappellaro resets at stage boundaries, tree increments inside stages.

    Increments stored for the last detection of each stage are inert since the
    reset overrides them.
    """

    variant = "hybrid"

    def control_phase(self, schedule, state):
        if state.first:
            return np.zeros(np.shape(state.theta))
        if state.m == 0:
            return (0.5 * _arg_neg(state.coeff(1 << (state.k + 1)))) % TWO_PI
        return self._stepped(state)


VARIANTS = {
    "nonadaptive": Nonadaptive,
    "homodyne": AdaptiveHomodyne,
    "cappellaro": CappellaroUpdate,
    "decision_tree": DecisionTree,
    "hybrid": Hybrid,
}


def make_policy(variant: str, schedule: Schedule, params=None) -> Policy:
    """Build a policy by variant name. Tree variants default to all-zero increments."""
    try:
        cls = VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown policy variant {variant!r}; choose from {sorted(VARIANTS)}") from None
    if cls.has_parameters:
        if params is None:
            params = np.zeros(schedule.num_parameters)
        return cls(schedule, params)
    if params is not None and len(params):
        raise ValueError(f"{variant} takes no parameters")
    return cls()


def policy_to_vector(policy: Policy) -> np.ndarray:
    if not policy.has_parameters:
        return np.zeros(0)
    return policy.to_vector()


def policy_from_vector(schedule: Schedule, vector, variant: str = "decision_tree") -> Policy:
    return make_policy(variant, schedule, np.asarray(vector, dtype=float))


def next_control_phase(policy: Policy, schedule: Schedule, state: PolicyState) -> np.ndarray:
    return policy.control_phase(schedule, state)


# --------------------------------------------------------------------------
# scalar reference path


@dataclass
class TrialResult:
    estimate: float
    outcomes: np.ndarray
    thetas: np.ndarray
    stages: np.ndarray
    posterior: object


def run_trial(schedule: Schedule, policy: Policy, phi: float, model: MeasurementModel, rng) -> TrialResult:
    """Run one adaptive measurement with a dense :class:`FourierPosterior`.

    ``rng`` is either a ``numpy.random.Generator`` (one ``random()`` draw per
    detection) or a sequence of uniform draws, one per detection.
    """
    policy.check_schedule(schedule)
    if hasattr(rng, "random"):
        draws = rng.random(schedule.num_detections)
    else:
        draws = np.asarray(rng, dtype=float)
        if draws.size < schedule.num_detections:
            raise ValueError("not enough draws for the schedule")

    post = uniform_prior(max(schedule.total_time(), 2))
    theta = np.zeros(1)
    u_prev = None
    us, thetas, ks = [], [], []
    for d, (k, m) in enumerate(schedule.sequence):
        state = PolicyState(d, k, m, theta, u_prev, lambda w, p=post: np.array([p.coeff(w)]))
        theta = np.asarray(policy.control_phase(schedule, state), dtype=float)
        th = float(theta[0])
        vis = decayed_visibility(model, k)
        p_plus = 0.5 * (1.0 + vis * math.cos((1 << k) * phi - th))
        u = 1 if draws[d] < p_plus else -1
        post = bayes_update(post, u, th, k, vis)
        u_prev = np.array([u])
        us.append(u)
        thetas.append(th)
        ks.append(k)
    return TrialResult(phase_estimate(post), np.array(us), np.array(thetas), np.array(ks), post)


# --------------------------------------------------------------------------
# batched engine


@numba.njit(cache=True)
def _fourier_step(c, u, cos_t, sin_t, vis, out, scale):
    # compact stride-2^k form: b_{j-1}, b_{j+1} are columns j-1, j+1; b_{-1} = conj(b_1)
    rows, cols = c.shape
    keep = cols - 1
    for i in range(rows):
        gain = 0.25 * vis * u[i]
        rot = complex(cos_t[i], sin_t[i])
        rot_c = rot.conjugate()
        b0 = 0.5 * c[i, 0].real + 2.0 * gain * (c[i, 1] * rot).real
        s = 2.0 * np.pi * b0
        scale[i] = s
        inv = 1.0 / s if s > 0.0 else 1.0
        out[i, 0] = b0 * inv
        for j in range(1, keep):
            out[i, j] = (0.5 * c[i, j] + gain * (c[i, j - 1] * rot_c + c[i, j + 1] * rot)) * inv


class CompactBatch:
    """Posterior coefficients for many trials, stored at stride ``2**k``.

    ``coeffs[:, j]`` is ``b_{j 2^k}``; entries past the truncation limit are
    dropped because they cannot reach ``b_1`` any more.
    """

    def __init__(self, coeffs, k: int, log_weight=None):
        self.coeffs = coeffs
        self.k = k
        self.log_weight = log_weight

    @classmethod
    def prior(cls, size: int, columns: int, k: int, track_weight: bool = False):
        coeffs = np.zeros((size, columns), dtype=np.complex128)
        coeffs[:, 0] = 1.0 / TWO_PI
        return cls(coeffs, k, np.zeros(size) if track_weight else None)

    def coeff(self, w: int) -> np.ndarray:
        stride = 1 << self.k
        j, rem = divmod(w, stride)
        if rem or j >= self.coeffs.shape[1]:
            return np.zeros(self.coeffs.shape[0], dtype=np.complex128)
        return self.coeffs[:, j]

    def refine(self, k: int, columns: int) -> None:
        """Move to the finer stride ``2**k`` (``k`` one below the current stage)."""
        old = self.coeffs
        new = np.zeros((old.shape[0], columns), dtype=np.complex128)
        take = min(old.shape[1], (columns + 1) // 2)
        new[:, 0:2 * take:2] = old[:, :take]
        self.coeffs = new
        self.k = k

    def update(self, u, theta, vis: float) -> np.ndarray:
        """Apply one detection per row; returns the per-row outcome probability.

        The result keeps one column fewer than before.
        """
        c = self.coeffs
        rows, cols = c.shape
        new = np.empty((rows, cols - 1), dtype=np.complex128)
        scale = np.empty(rows)
        _fourier_step(c, np.ascontiguousarray(u, dtype=float), np.cos(theta), np.sin(theta), float(vis), new, scale)
        self.coeffs = new
        if self.log_weight is not None:
            with np.errstate(divide="ignore"):
                self.log_weight = self.log_weight + np.log(np.where(scale > 0, scale, 0.0))
        return scale

    def take(self, rows):
        lw = None if self.log_weight is None else self.log_weight[rows]
        return CompactBatch(self.coeffs[rows], self.k, lw)


def columns_needed(schedule: Schedule, d: int) -> int:
    """Stored columns required just before detection ``d``."""
    k = schedule.sequence[d][0]
    return int((1 + schedule.reach[d]) >> k) + 1


def simulate_batch(schedule: Schedule, policy: Policy, model: MeasurementModel, phi, draws, record: bool = False):
    """Run many trials at once with truncated compact posteriors.

    Parameters
    ----------
    phi : ndarray, shape (B,)
        True phases.
    draws : ndarray, shape (B, D)
        Uniform draws deciding each outcome.
    record : bool
        Also return the outcome and control-phase histories.

    Returns
    -------
    estimates : ndarray, shape (B,)
        Final estimates ``arg(b_{-1})``.
    history : tuple of ndarray, optional
        ``(outcomes, thetas)``, each of shape (B, D), when ``record`` is set.
    """
    policy.check_schedule(schedule)
    phi = np.asarray(phi, dtype=float)
    size = phi.shape[0]
    seq = schedule.sequence
    if draws.shape[1] < len(seq):
        raise ValueError("not enough draws for the schedule")
    by_detection = np.ascontiguousarray(np.asarray(draws, dtype=float)[:, : len(seq)].T)
    batch = CompactBatch.prior(size, columns_needed(schedule, 0), schedule.K)
    theta = np.zeros(size)
    u = None
    if record:
        outcomes = np.empty((size, len(seq)), dtype=np.int8)
        thetas = np.empty((size, len(seq)))
    for d, (k, m) in enumerate(seq):
        if k != batch.k:
            batch.refine(k, columns_needed(schedule, d))
        theta = np.asarray(policy.control_phase(schedule, PolicyState(d, k, m, theta, u, batch.coeff)), dtype=float)
        vis = decayed_visibility(model, k)
        p_plus = 0.5 * (1.0 + vis * np.cos((1 << k) * phi - theta))
        u = np.where(by_detection[d] < p_plus, 1.0, -1.0)
        batch.update(u, theta, vis)
        if record:
            outcomes[:, d] = u
            thetas[:, d] = theta
    est = np.angle(np.conj(batch.coeff(1)))
    if record:
        return est, (outcomes, thetas)
    return est


# --------------------------------------------------------------------------
# persistence


def policy_to_dict(policy: Policy, schedule: Schedule) -> dict:
    return {
        "format": POLICY_FORMAT,
        "version": POLICY_FORMAT_VERSION,
        "variant": policy.variant,
        "schedule": {"K": schedule.K, "G": schedule.G, "F": schedule.F},
        "parameters": [float(x) for x in policy_to_vector(policy)],
    }


def policy_from_dict(doc: dict):
    """Inverse of :func:`policy_to_dict`; returns ``(policy, schedule)``."""
    if doc.get("format") != POLICY_FORMAT:
        raise ValueError("not a policy document")
    sched = Schedule(**{key: int(doc["schedule"][key]) for key in ("K", "G", "F")})
    params = doc.get("parameters") or None
    return make_policy(doc["variant"], sched, params), sched


def save_policy(path, policy: Policy, schedule: Schedule, extra: Optional[dict] = None) -> None:
    doc = policy_to_dict(policy, schedule)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_policy(path):
    with open(path) as fh:
        return policy_from_dict(json.load(fh))
