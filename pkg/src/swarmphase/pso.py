"""Constriction-factor particle swarm optimisation with reflective walls.

Velocity update::

    v' = chi * (v + c_g r_g (x_g - x) + c_l r_l (x_l - x))

with a fully connected swarm (single global best), synchronous updates and a
fixed evaluation seed shared by every candidate so that comparisons between
candidates are not swamped by sampling noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


class ObjectiveError(RuntimeError):
    """The objective returned NaN or -inf for some position."""

    def __init__(self, value, position):
        super().__init__(f"objective returned {value!r}")
        self.value = value
        self.position = np.array(position)


@dataclass
class SwarmConfig:
    chi: float = 0.729
    c_g: float = 2.05
    c_l: float = 2.05
    particles: int = 10
    max_iterations: int = 300
    v_max: Optional[float] = None  # None: half the box width
    lower: float = 0.0
    upper: float = TWO_PI
    tolerance: float = 1e-4
    per_coordinate_draws: bool = True
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.chi < 1:
            raise ValueError("chi must lie in (0, 1)")
        if self.c_g <= 0 or self.c_l <= 0:
            raise ValueError("c_g and c_l must be positive")
        if self.particles < 2:
            raise ValueError("need at least 2 particles")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if not self.upper > self.lower:
            raise ValueError("upper bound must exceed lower bound")

    @property
    def velocity_bound(self) -> float:
        if self.v_max is None:
            return 0.5 * (self.upper - self.lower)
        return self.v_max


@dataclass
class Swarm:
    positions: np.ndarray
    velocities: np.ndarray
    values: np.ndarray
    best_positions: np.ndarray
    best_values: np.ndarray

    @property
    def leader(self) -> int:
        return int(np.argmin(self.best_values))

    @property
    def global_best(self) -> np.ndarray:
        return self.best_positions[self.leader]

    @property
    def global_value(self) -> float:
        return float(self.best_values[self.leader])

    def spread(self) -> float:
        """Largest coordinate-wise distance between any two particles."""
        return float(np.max(np.ptp(self.positions, axis=0)))


@dataclass
class TraceRow:
    iteration: int
    best_value: float
    mean_value: float
    spread: float


@dataclass
class OptimizeResult:
    best_position: np.ndarray
    best_value: float
    validation_value: Optional[float]
    trace: list = field(default_factory=list)
    evaluations: int = 0
    converged: bool = False


def velocity_update(x, v, x_g, x_l, cfg: SwarmConfig, r_g, r_l):
    return cfg.chi * (v + cfg.c_g * r_g * (x_g - x) + cfg.c_l * r_l * (x_l - x))


def reflect(x, v, lower: float, upper: float):
    """Fold coordinates back into ``[lower, upper]``, flipping their velocity."""
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise ValueError("positions and velocities must be finite")
    while True:
        high = x > upper
        low = x < lower
        if not (high.any() or low.any()):
            return x, v
        x = np.where(high, 2 * upper - x, x)
        x = np.where(low, 2 * lower - x, x)
        v = np.where(high | low, -v, v)


def _evaluate(objective, positions, seed, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda p: objective(p, seed), positions))
    else:
        values = [objective(p, seed) for p in positions]
    values = np.array(values, dtype=float)
    for value, pos in zip(values, positions):
        if math.isnan(value) or value == -math.inf:
            raise ObjectiveError(value, pos)
    return values


def swarm_init(cfg: SwarmConfig, dimension: int, rng, objective=None, eval_seed=None) -> Swarm:
    """Uniform positions in the box and uniform velocities in ``[-v_max, v_max]``."""
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = (cfg.particles, dimension)
    x = rng.uniform(cfg.lower, cfg.upper, shape)
    vb = cfg.velocity_bound
    v = rng.uniform(-vb, vb, shape)
    if objective is None:
        values = np.full(cfg.particles, np.inf)
    else:
        values = _evaluate(objective, x, eval_seed, cfg.workers)
    return Swarm(x, v, values, x.copy(), values.copy())


def step(swarm: Swarm, cfg: SwarmConfig, rng, objective, eval_seed) -> None:
    """One synchronous iteration: move every particle, then update the bests."""
    shape = swarm.positions.shape if cfg.per_coordinate_draws else (swarm.positions.shape[0], 1)
    r_g = rng.random(shape)
    r_l = rng.random(shape)
    v = velocity_update(swarm.positions, swarm.velocities, swarm.global_best, swarm.best_positions, cfg, r_g, r_l)
    x, v = reflect(swarm.positions + v, v, cfg.lower, cfg.upper)
    values = _evaluate(objective, x, eval_seed, cfg.workers)
    better = values < swarm.best_values
    swarm.best_positions[better] = x[better]
    swarm.best_values[better] = values[better]
    swarm.positions = x
    swarm.velocities = v
    swarm.values = values


def _trace_row(i, swarm):
    return TraceRow(i, swarm.global_value, float(np.mean(swarm.values)), swarm.spread())


def optimize(
    objective: Callable,
    cfg: SwarmConfig,
    dimension: int,
    seed: int,
    eval_seed: int = 0,
    validation_seed: Optional[int] = None,
    callback: Optional[Callable] = None,
) -> OptimizeResult:
    """Minimise ``objective(position, eval_seed)`` over the box.

    Every candidate is scored with the same ``eval_seed``. When
    ``validation_seed`` is given the final best position is re-scored with it.
    The run stops after ``cfg.max_iterations`` or once the swarm spread drops
    below ``cfg.tolerance``.
    """
    rng = np.random.default_rng(seed)
    swarm = swarm_init(cfg, dimension, rng, objective, eval_seed)
    trace = [_trace_row(0, swarm)]
    evaluations = cfg.particles
    converged = swarm.spread() < cfg.tolerance
    for i in range(1, cfg.max_iterations + 1):
        if converged:
            break
        step(swarm, cfg, rng, objective, eval_seed)
        evaluations += cfg.particles
        trace.append(_trace_row(i, swarm))
        if callback is not None:
            callback(trace[-1])
        converged = swarm.spread() < cfg.tolerance

    best = swarm.global_best.copy()
    validation = None if validation_seed is None else float(objective(best, validation_seed))
    return OptimizeResult(best, swarm.global_value, validation, trace, evaluations, converged)
