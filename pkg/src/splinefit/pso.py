"""Particle-swarm search over leaf genomes.

Two entry points mirror the two coarse-fit stages: :func:`extract_phyllotaxy`
runs a single swarm update over 33-dimensional genomes (shape plus azimuth)
and keeps only the azimuth, and :func:`fit_initial_surface` runs the full
32-dimensional search with the azimuth fixed.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError
from .leaf import (
    GENOME_SIZE, NormalizationRecord, decode_many, genome_bounds, leaf_surface,
    normalize_cloud, wrap_angle,
)
from .metrics import MAX_FITNESS_POINTS, NearestNeighborIndex, as_points, subsample
from .nurbs import GridBasis, NurbsSurface

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PsoConfig:
    n_particles: int = 300
    n_iterations: int = 50
    w0: float = 0.9
    w_end: float = 0.4
    c1_0: float = 2.5
    c1_end: float = 0.5
    c2_0: float = 0.5
    c2_end: float = 2.5
    lambda_hd: float = 0.1
    eval_grid: Tuple[int, int] = (32, 8)
    max_fitness_points: int = MAX_FITNESS_POINTS
    phyllotaxy_iterations: int = 1
    velocity_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigurationError("need at least 2 particles")
        if self.n_iterations < 1 or self.phyllotaxy_iterations < 1:
            raise ConfigurationError("iteration counts must be positive")
        rates = (self.w0, self.w_end, self.c1_0, self.c1_end, self.c2_0, self.c2_end)
        if min(rates) <= 0:
            raise ConfigurationError("schedule constants must be positive")
        if self.lambda_hd < 0:
            raise ConfigurationError("lambda_hd must be non-negative")

    def replace(self, **changes) -> "PsoConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_fitness: np.ndarray
    gbest_position: np.ndarray
    gbest_fitness: float
    lower: np.ndarray
    upper: np.ndarray
    iteration: int = 0


def schedule(iteration: int, total: int, config: PsoConfig) -> Tuple[float, float, float]:
    """Inertia decays exponentially; c1 and c2 vary linearly (w, c1, c2)."""
    if not 0 <= iteration < max(total, 1):
        raise ValueError(f"iteration {iteration} outside [0, {total})")
    frac = iteration / (total - 1) if total > 1 else 0.0
    w = config.w0 * (config.w_end / config.w0) ** frac
    c1 = config.c1_0 + (config.c1_end - config.c1_0) * frac
    c2 = config.c2_0 + (config.c2_end - config.c2_0) * frac
    return w, c1, c2


def _evaluate(objective: Objective, positions: np.ndarray) -> np.ndarray:
    f = np.asarray(objective(positions), dtype=float).reshape(len(positions))
    return np.where(np.isfinite(f), f, np.inf)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, (int, np.integer)) or rng is None:
        return np.random.default_rng(rng)
    return rng


def init_swarm(objective: Objective, lower, upper, config: PsoConfig, rng=None) -> SwarmState:
    """Uniform positions in the box, velocities within +-10% of each range."""
    rng = _as_rng(config.seed if rng is None else rng)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    span = upper - lower
    shape = (config.n_particles, len(lower))
    positions = lower + rng.random(shape) * span
    velocities = (2.0 * rng.random(shape) - 1.0) * config.velocity_fraction * span
    fitness = _evaluate(objective, positions)
    best = int(np.argmin(fitness))
    return SwarmState(
        positions=positions, velocities=velocities,
        pbest_positions=positions.copy(), pbest_fitness=fitness.copy(),
        gbest_position=positions[best].copy(), gbest_fitness=float(fitness[best]),
        lower=lower, upper=upper,
    )


def step(state: SwarmState, objective: Objective, iteration: int, total: int,
         config: PsoConfig, rng) -> SwarmState:
    """One velocity/position update followed by best-position bookkeeping.

    ``rng`` only needs a ``random(shape)`` method; tests pass a stub returning
    ones to make the update deterministic.
    """
    w, c1, c2 = schedule(iteration, total, config)
    m = state.positions
    r1 = rng.random(m.shape)
    r2 = rng.random(m.shape)
    v = (w * state.velocities
         + c1 * r1 * (state.pbest_positions - m)
         + c2 * r2 * (state.gbest_position - m))
    m = m + v
    low = m < state.lower
    high = m > state.upper
    m = np.where(low, state.lower, np.where(high, state.upper, m))
    v = np.where(low | high, 0.0, v)

    fitness = _evaluate(objective, m)
    improved = fitness < state.pbest_fitness
    pbest_positions = np.where(improved[:, None], m, state.pbest_positions)
    pbest_fitness = np.where(improved, fitness, state.pbest_fitness)
    best = int(np.argmin(pbest_fitness))
    gbest_position, gbest_fitness = state.gbest_position, state.gbest_fitness
    if pbest_fitness[best] < gbest_fitness:
        gbest_position, gbest_fitness = pbest_positions[best].copy(), float(pbest_fitness[best])
    return SwarmState(m, v, pbest_positions, pbest_fitness, gbest_position,
                      gbest_fitness, state.lower, state.upper, state.iteration + 1)


def optimize(objective: Objective, lower, upper, config: PsoConfig,
             n_iterations: Optional[int] = None, seed: Optional[int] = None
             ) -> Tuple[SwarmState, List[float]]:
    """Run the swarm; returns the final state and the gbest trace per step."""
    total = config.n_iterations if n_iterations is None else n_iterations
    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = init_swarm(objective, lower, upper, config, rng)
    trace = []
    for t in range(total):
        state = step(state, objective, t, total, config, rng)
        trace.append(state.gbest_fitness)
    return state, trace


class LeafFitness:
    """Batch objective: PSO fitness between decoded genomes and a cloud.

    Each decoded surface is translated so the centroid of its evaluation grid
    sits on the cloud centroid; 33-value genomes are additionally rotated
    about the vertical axis through that centroid.
    """

    def __init__(self, cloud, lambda_hd: float = 0.1, eval_grid=(32, 8),
                 max_points: int = MAX_FITNESS_POINTS, seed: int = 0):
        pts = as_points(cloud, "cloud")
        self.centroid = pts.mean(axis=0)
        self.cloud = subsample(pts, max_points, seed)
        self.index = NearestNeighborIndex(self.cloud)
        self.lambda_hd = lambda_hd
        lower, upper = genome_bounds()
        template = leaf_surface(decode_many(0.5 * (lower + upper)))
        self.basis = GridBasis.for_surface(template, *eval_grid, derivatives=False)
        self._centroid_row = self.basis.value.mean(axis=0)

    def control_points(self, genomes) -> np.ndarray:
        g = np.asarray(genomes, dtype=float)
        pts = decode_many(g)
        sample_centroid = np.einsum("k,...kd->...d", self._centroid_row,
                                    pts.reshape(pts.shape[:-3] + (-1, 3)))
        pts = pts - sample_centroid[..., None, None, :]
        if g.shape[-1] == GENOME_SIZE + 1:
            c, s = np.cos(g[..., 32]), np.sin(g[..., 32])
            x, y = pts[..., 0].copy(), pts[..., 1].copy()
            pts[..., 0] = c[..., None, None] * x - s[..., None, None] * y
            pts[..., 1] = s[..., None, None] * x + c[..., None, None] * y
        return pts + self.centroid

    def surface(self, genome) -> NurbsSurface:
        return leaf_surface(self.control_points(genome))

    def samples(self, genomes) -> np.ndarray:
        return self.basis.samples(self.control_points(genomes))

    def __call__(self, genomes) -> np.ndarray:
        samples = self.samples(np.atleast_2d(genomes))
        out = np.empty(len(samples))
        for i, s in enumerate(samples):
            d_sc = self.index.sq_distances(s)
            d_cs = NearestNeighborIndex(s).sq_distances(self.cloud)
            chamfer = d_sc.sum() + d_cs.sum()
            hausdorff = np.sqrt(max(d_sc.max(), d_cs.max()))
            out[i] = chamfer + self.lambda_hd * hausdorff
        return out


def _provisional_frame(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    scale = float(np.hypot(centered[:, 0], centered[:, 1]).max())
    # defer to normalize_cloud for the degenerate-input error
    if not scale > 0:
        normalize_cloud(points)
    return centered / scale, centroid, scale


def extract_phyllotaxy(cloud, config: PsoConfig = PsoConfig(), seed: Optional[int] = None,
                       stalk_xy: Optional[Sequence[float]] = (0.0, 0.0)) -> float:
    """Leaf azimuth in radians from a short 33-dimensional swarm search.

    The genome family is symmetric under a half turn, so the search fixes the
    leaf axis only modulo pi.  When ``stalk_xy`` is given the direction is
    chosen to point from the stalk towards the leaf centroid.
    """
    pts = as_points(cloud, "cloud")
    seed = config.seed if seed is None else seed
    normalized, centroid, scale = _provisional_frame(pts)
    objective = LeafFitness(normalized, config.lambda_hd, config.eval_grid,
                            config.max_fitness_points, seed)
    lower, upper = genome_bounds(with_rotation=True)
    state, _ = optimize(objective, lower, upper, config,
                        n_iterations=config.phyllotaxy_iterations, seed=seed)
    angle = float(state.gbest_position[GENOME_SIZE])
    if stalk_xy is not None:
        outward = centroid[:2] - np.asarray(stalk_xy, dtype=float)
        if np.hypot(*outward) > 1e-6 * scale:
            if outward @ np.array([np.cos(angle), np.sin(angle)]) < 0:
                angle += np.pi
    return wrap_angle(angle)


@dataclass
class InitialFit:
    surface: NurbsSurface          # normalized frame
    genome: np.ndarray
    fitness: float
    trace: List[float]
    cloud: np.ndarray              # normalized cloud the fit was scored against
    record: NormalizationRecord


def fit_initial_surface(cloud, angle: float, config: PsoConfig = PsoConfig(),
                        seed: Optional[int] = None) -> InitialFit:
    """Coarse surface fit with the azimuth fixed, in the normalized frame."""
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    seed = config.seed if seed is None else seed
    normalized, record = normalize_cloud(cloud, rotation=angle)
    objective = LeafFitness(normalized, config.lambda_hd, config.eval_grid,
                            config.max_fitness_points, seed)
    lower, upper = genome_bounds()
    state, trace = optimize(objective, lower, upper, config, seed=seed)
    logger.debug("pso fitness %.6g after %d iterations", state.gbest_fitness, len(trace))
    return InitialFit(
        surface=objective.surface(state.gbest_position),
        genome=state.gbest_position.copy(),
        fitness=state.gbest_fitness,
        trace=trace,
        cloud=normalized,
        record=record,
    )
