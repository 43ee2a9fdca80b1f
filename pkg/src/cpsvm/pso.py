"""Particle swarm maximizer with linearly decaying inertia weight."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# log10 search box for (C, sigma): C in [0.01, 100], sigma in [0.01, 50]
DEFAULT_BOUNDS = ((-2.0, 2.0), (-2.0, math.log10(50.0)))


class FitnessError(RuntimeError):
    """Raised when the fitness function returns a non-finite value."""


@dataclass(frozen=True)
class SwarmConfig:
    population: int = 40
    max_iterations: int = 100
    c1: float = 1.5
    c2: float = 1.5
    omega_start: float = 0.9
    omega_end: float = 0.4
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS
    velocity_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.omega_start > self.omega_end:
            raise ValueError("omega_start must exceed omega_end")
        if any(not lo < hi for lo, hi in self.bounds):
            raise ValueError("every bound needs lo < hi")
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    @property
    def velocity_cap(self) -> np.ndarray:
        return self.velocity_fraction * (self.upper - self.lower)


@dataclass
class Swarm:
    """Per-particle state; row ``i`` of every array belongs to particle ``i``."""

    positions: np.ndarray
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_fitness: np.ndarray

    @classmethod
    def initialize(cls, cfg: SwarmConfig, rng) -> "Swarm":
        pos = rng.uniform(cfg.lower, cfg.upper, size=(cfg.population, len(cfg.bounds)))
        return cls(pos, np.zeros_like(pos), pos.copy(), np.full(cfg.population, -np.inf))


@dataclass
class SwarmResult:
    gbest_position: np.ndarray
    gbest_fitness: float
    best_fitness_curve: list[float] = field(default_factory=list)
    mean_pbest_curve: list[float] = field(default_factory=list)
    # (iteration, particle, position..., fitness) for every evaluation
    evaluations: list[tuple] = field(default_factory=list)

    @property
    def evaluation_count(self) -> int:
        return len(self.evaluations)


def inertia(k: float, k_max: float, start: float = 0.9, end: float = 0.4) -> float:
    """Linear decay from ``start`` at ``k = 0`` to ``end`` at ``k = k_max``."""
    return start - (start - end) * (k / k_max)


def step(swarm: Swarm, gbest: np.ndarray, omega: float, cfg: SwarmConfig, rng) -> Swarm:
    """Move every particle once (in place) and return the swarm.

    Two independent uniform draws per particle and dimension are taken from
    ``rng.random`` in particle order. Velocities are clipped to the cap;
    a position leaving the box is clamped and that velocity component zeroed.
    """
    p, d = swarm.positions.shape
    r = rng.random((p, 2, d))
    x = swarm.positions
    v = (omega * swarm.velocities
         + cfg.c1 * r[:, 0, :] * (swarm.pbest_positions - x)
         + cfg.c2 * r[:, 1, :] * (np.asarray(gbest) - x))
    cap = cfg.velocity_cap
    v = np.clip(v, -cap, cap)
    x_new = x + v
    lo, hi = cfg.lower, cfg.upper
    outside = (x_new < lo) | (x_new > hi)
    swarm.positions = np.clip(x_new, lo, hi)
    swarm.velocities = np.where(outside, 0.0, v)
    return swarm


def optimize(fitness: Callable[[np.ndarray], float], cfg: SwarmConfig = SwarmConfig()) -> SwarmResult:
    """Maximize ``fitness`` over the box ``cfg.bounds``.

    Each iteration evaluates all particles, then updates personal bests
    (strict improvement only), then the global best, then moves the swarm.
    """
    rng = np.random.default_rng(cfg.seed)
    swarm = Swarm.initialize(cfg, rng)
    gbest = swarm.positions[0].copy()
    gbest_fit = -np.inf
    result = SwarmResult(gbest, gbest_fit)

    for k in range(cfg.max_iterations):
        scores = np.array([fitness(x.copy()) for x in swarm.positions], dtype=np.float64)
        for i, (x, f) in enumerate(zip(swarm.positions, scores)):
            if not np.isfinite(f):
                raise FitnessError(f"non-finite fitness {f!r} at iteration {k}, position {x.tolist()}")
            result.evaluations.append((k, i, *x.tolist(), float(f)))

        improved = scores > swarm.pbest_fitness
        swarm.pbest_fitness = np.where(improved, scores, swarm.pbest_fitness)
        swarm.pbest_positions[improved] = swarm.positions[improved]

        best = int(np.argmax(swarm.pbest_fitness))
        if swarm.pbest_fitness[best] > gbest_fit:
            gbest_fit = float(swarm.pbest_fitness[best])
            gbest = swarm.pbest_positions[best].copy()
        result.best_fitness_curve.append(gbest_fit)
        result.mean_pbest_curve.append(float(swarm.pbest_fitness.mean()))

        omega = inertia(k, cfg.max_iterations, cfg.omega_start, cfg.omega_end)
        step(swarm, gbest, omega, cfg, rng)

    result.gbest_position = gbest
    result.gbest_fitness = gbest_fit
    return result
