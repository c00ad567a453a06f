"""Holevo-variance evaluation: exact enumeration, seeded Monte Carlo, bounds."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .model import MeasurementModel, decayed_visibility
from .posterior import TWO_PI
from .protocol import (
    CompactBatch,
    Policy,
    PolicyState,
    Schedule,
    columns_needed,
    make_policy,
    simulate_batch,
)

WORKERS_ENV = "SWARMPHASE_WORKERS"
BLOCK_SIZE = 4096
ENUMERATION_CAP = 22
PRUNE_BELOW = 1e-30

REPORT_COLUMNS = (
    "protocol",
    "method",
    "K",
    "G",
    "F",
    "f_d",
    "t2_over_tau",
    "N",
    "V_H",
    "V_H_N",
    "std_error",
    "trials",
    "master_seed",
    "workers",
)


class EnumerationCapError(ValueError):
    """Raised when exact enumeration would exceed the detection cap."""


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    value = int(raw)
    if value < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return value


def format_value(value) -> str:
    """Shortest round-trip text for a cell; ``None`` becomes an empty cell."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


@dataclass
class VarianceReport:
    v_h: float
    n: int
    method: str
    std_error: Optional[float] = None
    trials: Optional[int] = None
    protocol: str = ""
    schedule: Optional[Schedule] = None
    f_d: Optional[float] = None
    t2_over_tau: Optional[float] = None
    master_seed: Optional[int] = None
    workers: Optional[int] = None
    mean_cos: Optional[float] = None
    total_probability: Optional[float] = None
    pruned_mass: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def v_h_n(self) -> float:
        return self.v_h * self.n

    def row(self) -> dict:
        s = self.schedule
        return {
            "protocol": self.protocol,
            "method": self.method,
            "K": s.K if s else None,
            "G": s.G if s else None,
            "F": s.F if s else None,
            "f_d": self.f_d,
            "t2_over_tau": self.t2_over_tau,
            "N": self.n,
            "V_H": self.v_h,
            "V_H_N": self.v_h_n,
            "std_error": self.std_error,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "workers": self.workers,
        }

    def to_csv_row(self) -> list:
        r = self.row()
        return [format_value(r[c]) for c in REPORT_COLUMNS]


def _variance_from_sharpness(s: float) -> float:
    if s <= 0:
        return math.inf
    return s**-2 - 1.0


# --------------------------------------------------------------------------
# bounds


def holevo_lower_bound(n):
    """``tan(pi / (N + 2))**2``, the floor for any measurement of total time N."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("N must be >= 1")
    out = np.tan(np.pi / (n + 2.0)) ** 2
    return float(out) if out.ndim == 0 else out


def equal_time_bound(n):
    """Phase-variance floor ``1/N`` when every detection uses time ``tau``."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("N must be >= 1")
    out = 1.0 / n
    return float(out) if out.ndim == 0 else out


def equal_time_dynamic_range(n):
    """``Delta B / B_max`` floor ``pi / sqrt(N)`` for equal interaction times."""
    out = np.pi / np.sqrt(np.asarray(n, dtype=float))
    return float(out) if out.ndim == 0 else out


def multi_time_dynamic_range(n):
    """Approximate ``Delta B / B_max`` floor ``1/N`` with multiple interaction times."""
    out = 1.0 / np.asarray(n, dtype=float)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# exact enumeration


def exact_variance(
    schedule: Schedule,
    policy: Policy,
    model: MeasurementModel,
    cap: int = ENUMERATION_CAP,
    prune_below: float = PRUNE_BELOW,
    chunk: int = 1 << 15,
) -> VarianceReport:
    """Holevo variance summed over every outcome sequence.

    The sharpness is ``sum over leaves of P(u) |b_1| / b_0``; no sampling is
    involved. Branches whose probability drops below ``prune_below`` are
    dropped and their mass reported as ``pruned_mass``.
    """
    policy.check_schedule(schedule)
    total = schedule.num_detections
    if total > cap:
        raise EnumerationCapError(f"{total} detections exceed the enumeration cap of {cap}")

    seq = schedule.sequence
    vis = [decayed_visibility(model, k) for k, _ in seq]
    leaf_sharp: list = []
    leaf_prob: list = []
    pruned: list = []

    log_floor = math.log(prune_below)

    def descend(batch: CompactBatch, theta, u_prev, d):
        while d < total:
            rows = batch.coeffs.shape[0]
            if 2 * rows > chunk and rows > 1:
                # depth-first over halves keeps memory bounded; order is fixed
                half = rows // 2
                for part in (slice(0, half), slice(half, rows)):
                    descend(batch.take(part), theta[part], None if u_prev is None else u_prev[part], d)
                return
            k, m = seq[d]
            if k != batch.k:
                batch.refine(k, columns_needed(schedule, d))
            theta = np.asarray(
                policy.control_phase(schedule, PolicyState(d, k, m, theta, u_prev, batch.coeff)), dtype=float
            )
            both = np.concatenate([np.arange(rows), np.arange(rows)])
            batch = batch.take(both)
            theta = theta[both]
            u_prev = np.concatenate([np.ones(rows), -np.ones(rows)])
            batch.update(u_prev, theta, vis[d])
            keep = batch.log_weight >= log_floor
            if not np.all(keep):
                dropped = batch.log_weight[~keep]
                pruned.extend(np.exp(dropped[np.isfinite(dropped)]).tolist())
                batch = batch.take(keep)
                theta = theta[keep]
                u_prev = u_prev[keep]
                if batch.coeffs.shape[0] == 0:
                    return
            d += 1
        prob = np.exp(batch.log_weight)
        b1 = batch.coeff(1)
        b0 = batch.coeffs[:, 0].real
        leaf_prob.extend(prob.tolist())
        leaf_sharp.extend((prob * np.abs(b1) / b0).tolist())

    start = CompactBatch.prior(1, columns_needed(schedule, 0), schedule.K, track_weight=True)
    descend(start, np.zeros(1), None, 0)

    sharp = math.fsum(leaf_sharp)
    return VarianceReport(
        v_h=_variance_from_sharpness(sharp),
        n=schedule.total_time(),
        method="exact",
        protocol=policy.variant,
        schedule=schedule,
        f_d=model.f_d,
        t2_over_tau=model.t2_over_tau,
        mean_cos=sharp,
        total_probability=math.fsum(leaf_prob),
        pruned_mass=math.fsum(pruned),
    )


# --------------------------------------------------------------------------
# Monte Carlo


def trial_draws(schedule: Schedule, trials: int, master_seed: int, start_block: int = 0, stop_block=None):
    """Uniform draws for trials, shape ``(trials, 1 + D)``.

    Trial ``i`` reads row ``i % BLOCK_SIZE`` of block ``i // BLOCK_SIZE``,
    and each block has its own stream spawned from ``master_seed``. A trial's
    draws therefore depend only on ``(master_seed, i)``. Column 0 sets the
    true phase, the rest decide outcomes.
    """
    width = 1 + schedule.num_detections
    nblocks = -(-trials // BLOCK_SIZE)
    stop_block = nblocks if stop_block is None else stop_block
    parts = []
    for b in range(start_block, stop_block):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=(b,))))
        rows = min(BLOCK_SIZE, trials - b * BLOCK_SIZE)
        parts.append(rng.random((BLOCK_SIZE, width))[:rows])
    if not parts:
        return np.empty((0, width))
    return np.concatenate(parts)


def phases_from_draws(draws) -> np.ndarray:
    """Map column 0 of the draws onto ``(-pi, pi]``."""
    return math.pi - TWO_PI * draws[:, 0]


def cosine_errors(schedule: Schedule, policy: Policy, model: MeasurementModel, draws) -> np.ndarray:
    """``cos(phi_hat - phi)`` for each row of pre-drawn uniforms."""
    phi = phases_from_draws(draws)
    est = simulate_batch(schedule, policy, model, phi, draws[:, 1:])
    return np.cos(est - phi)


def summarize_cosines(cosines) -> tuple:
    """``(V_H, std_error, mean_cos)`` from per-trial ``cos(phi_hat - phi)``.

    The standard error is the delta-method propagation
    ``2 sd(c) / (sqrt(n) mean(c)**3)``.
    """
    c = np.asarray(cosines, dtype=float)
    n = c.size
    mean = math.fsum(c) / n
    if mean <= 0:
        return math.inf, math.inf, mean
    sd = math.sqrt(math.fsum((c - mean) ** 2) / (n - 1))
    v_h = mean**-2 - 1.0
    se = 2.0 * sd / (math.sqrt(n) * mean**3)
    return v_h, se, mean


def _block_cosines(schedule, policy, model, trials, master_seed, block):
    draws = trial_draws(schedule, trials, master_seed, block, block + 1)
    return cosine_errors(schedule, policy, model, draws)


def monte_carlo_cosines(schedule, policy, model, trials, master_seed, workers=None) -> np.ndarray:
    policy.check_schedule(schedule)
    workers = default_workers() if workers is None else workers
    nblocks = -(-trials // BLOCK_SIZE)
    run = lambda b: _block_cosines(schedule, policy, model, trials, master_seed, b)
    if workers > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(nblocks)))
    else:
        parts = [run(b) for b in range(nblocks)]
    return np.concatenate(parts)


def monte_carlo_variance(
    schedule: Schedule,
    policy: Policy,
    model: MeasurementModel,
    trials: int,
    master_seed: int,
    workers: Optional[int] = None,
) -> VarianceReport:
    """Holevo variance from ``trials`` simulated runs with uniform true phases.

    Uses ``<cos(phi_hat - phi)>`` as the sharpness so biased estimators are
    not rewarded.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials")
    workers = default_workers() if workers is None else workers
    cosines = monte_carlo_cosines(schedule, policy, model, trials, master_seed, workers)
    v_h, se, mean = summarize_cosines(cosines)
    return VarianceReport(
        v_h=v_h,
        n=schedule.total_time(),
        method="monte_carlo",
        std_error=se,
        trials=trials,
        protocol=policy.variant,
        schedule=schedule,
        f_d=model.f_d,
        t2_over_tau=model.t2_over_tau,
        master_seed=int(master_seed),
        workers=workers,
        mean_cos=mean,
    )


class PolicyObjective:
    """Monte Carlo Holevo variance of a tree policy as a function of its increments.

    Draws for each evaluation seed are generated once and reused, so every
    candidate scored under the same seed sees identical random numbers.
    """

    def __init__(self, schedule: Schedule, variant: str, model: MeasurementModel, trials: int):
        self.schedule = schedule
        self.variant = variant
        self.model = model
        self.trials = trials
        self._draws = {}

    def draws(self, seed: int):
        if seed not in self._draws:
            self._draws[seed] = trial_draws(self.schedule, self.trials, seed)
        return self._draws[seed]

    def policy(self, position):
        return make_policy(self.variant, self.schedule, position)

    def report(self, position, seed: int) -> tuple:
        cos = cosine_errors(self.schedule, self.policy(position), self.model, self.draws(seed))
        return summarize_cosines(cos)

    def __call__(self, position, seed: int) -> float:
        return self.report(position, seed)[0]


# --------------------------------------------------------------------------
# sweeps


def curve_sweep(policy_family, model, G, F, k_list, trials, master_seed, method="monte_carlo", workers=None) -> list:
    """One :class:`VarianceReport` per ``K`` in ``k_list``.

    ``policy_family`` is a variant name or a callable ``schedule -> Policy``.
    Every row is seeded by ``master_seed`` alone, so rows do not depend on the
    order of ``k_list``.
    """
    if isinstance(policy_family, str):
        name = policy_family
        policy_family = lambda s: make_policy(name, s)
    rows = []
    for K in k_list:
        sched = Schedule(K, G, F)
        policy = policy_family(sched)
        if method == "exact":
            rows.append(exact_variance(sched, policy, model))
        else:
            rows.append(monte_carlo_variance(sched, policy, model, trials, master_seed, workers))
    return rows


REPORT_FIELDS = tuple(f.name for f in fields(VarianceReport))
