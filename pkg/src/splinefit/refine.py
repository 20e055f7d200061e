"""Gradient refinement of a coarse leaf surface.

The loss combines a one-sided Chamfer term from the surface samples to the
data, a coverage term from the data to the surface, and curvature and
end-column proximity penalties.  With knots and weights fixed every term is a
quadratic function of the control points once the correspondences are frozen
(nearest data point per sample, foot-point parameters per data point), so the
gradient is assembled from cached rational basis rows.

Setting ``lambda_coverage=0`` and ``curvature_reduction="sum"`` gives the
plain samples-to-data formulation (:meth:`RefineConfig.samples_only`).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .metrics import MAX_FITNESS_POINTS, NearestNeighborIndex, as_points, subsample
from .nurbs import GridBasis, NurbsSurface, closest_points, rational_basis

CURVATURE_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class RefineConfig:
    n_iterations: int = 500
    lr0: float = 1e-2
    lr_halving_period: int = 50
    lambda_curv11: float = 1e-2
    lambda_curv12: float = 1e-4
    lambda_proximity: float = 8e-4
    # data-to-surface term, scaled so that 1.0 weighs it like the Chamfer term
    lambda_coverage: float = 32.0
    curvature_reduction: str = "mean"
    eval_grid: Tuple[int, int] = (32, 8)
    coverage_points: int = MAX_FITNESS_POINTS
    projection_steps: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        weights = (self.lambda_curv11, self.lambda_curv12, self.lambda_proximity,
                   self.lambda_coverage)
        if min(weights) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if not self.lr0 > 0:
            raise ConfigurationError("lr0 must be positive")
        if self.lr_halving_period < 1 or self.n_iterations < 0:
            raise ConfigurationError("periods must be >= 1")
        if self.curvature_reduction not in CURVATURE_REDUCTIONS:
            raise ConfigurationError(f"curvature_reduction must be one of {CURVATURE_REDUCTIONS}")
        if self.coverage_points < 1 or self.projection_steps < 1:
            raise ConfigurationError("coverage_points and projection_steps must be >= 1")
        if min(self.eval_grid) < 2:
            raise ConfigurationError("eval_grid needs at least 2 samples per direction")

    def replace(self, **changes) -> "RefineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def samples_only(cls, **changes) -> "RefineConfig":
        """Samples-to-data Chamfer with summed curvature, no coverage term."""
        return cls(lambda_coverage=0.0, curvature_reduction="sum", **changes)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss terms; ``total`` is their weighted sum with the config lambdas.

    ``curv11`` and ``curv12`` hold the aggregated values that enter the total
    (sums or means over the lattice, per ``curvature_reduction``).
    """

    total: float
    chamfer: float
    curv11: float
    curv12: float
    proximity: float
    coverage: float = 0.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def recombine(self, config: RefineConfig) -> float:
        return (self.chamfer + config.lambda_curv11 * self.curv11
                + config.lambda_curv12 * self.curv12
                + config.lambda_proximity * self.proximity
                + config.lambda_coverage * self.coverage)


def learning_rate(iteration: int, config: RefineConfig) -> float:
    """Step size halved every ``lr_halving_period`` iterations."""
    return config.lr0 * 0.5 ** (iteration // config.lr_halving_period)


def proximity_loss(points) -> float:
    """Pairwise squared distances among the rows of the two end columns."""
    p = np.asarray(points, dtype=float)
    total = 0.0
    for col in (0, p.shape[1] - 1):
        c = p[:, col]
        for a in range(len(c)):
            for b in range(a + 1, len(c)):
                d = c[a] - c[b]
                total += float(d @ d)
    return total


def proximity_gradient(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    grad = np.zeros_like(p)
    n = p.shape[0]
    for col in (0, p.shape[1] - 1):
        c = p[:, col]
        grad[:, col] = 2.0 * (n * c - c.sum(axis=0))
    return grad


def curvature_losses(surface: NurbsSurface, eval_grid=(32, 8),
                     basis: Optional[GridBasis] = None) -> Tuple[float, float]:
    """Sums of squared norms of d2S/du2 and d2S/dudv over the lattice."""
    if basis is None:
        basis = GridBasis.for_surface(surface, *eval_grid)
    flat = surface.points.reshape(-1, 3)
    s_uu = basis.d_uu @ flat
    s_uv = basis.d_uv @ flat
    return float((s_uu * s_uu).sum()), float((s_uv * s_uv).sum())


@dataclass(frozen=True)
class Assignment:
    """Frozen correspondences for one loss/gradient evaluation.

    ``targets[k]`` is the data point nearest to sample ``k``; ``rows`` are the
    rational basis rows at the foot points ``uv`` of ``data`` on the surface.
    """

    targets: np.ndarray
    data: np.ndarray
    uv: np.ndarray
    rows: np.ndarray


class RefineProblem:
    """Loss and gradient for one surface structure on a fixed lattice."""

    def __init__(self, surface: NurbsSurface, config: RefineConfig = RefineConfig()):
        self.template = surface
        self.config = config
        self.basis = GridBasis.for_surface(surface, *config.eval_grid)
        self.shape = surface.points.shape
        self.n_samples = self.basis.value.shape[0]
        self._curv_scale = 1.0 / self.n_samples if config.curvature_reduction == "mean" else 1.0

    def samples(self, points) -> np.ndarray:
        return self.basis.value @ np.asarray(points, dtype=float).reshape(-1, 3)

    def targets(self, points, index: NearestNeighborIndex) -> np.ndarray:
        idx, _ = index.query(self.samples(points))
        return index.points[idx]

    def coverage_data(self, index: NearestNeighborIndex) -> np.ndarray:
        if not self.config.lambda_coverage:
            return np.empty((0, 3))
        return subsample(index.points, self.config.coverage_points, seed=0)

    def assign(self, points, index: NearestNeighborIndex, data: Optional[np.ndarray] = None,
               previous: Optional[Assignment] = None) -> Assignment:
        """Correspondences at ``points``; ``previous`` warm-starts the projection."""
        targets = self.targets(points, index)
        if data is None:
            data = self.coverage_data(index)
        if len(data) == 0:
            return Assignment(targets, data, np.empty((0, 2)), np.empty((0, self.basis.value.shape[1])))
        surface = self.template.with_points(np.asarray(points, dtype=float).reshape(self.shape))
        if previous is not None and len(previous.uv) == len(data):
            uv, _ = closest_points(surface, data, iterations=self.config.projection_steps,
                                   init_uv=previous.uv)
        else:
            uv, _ = closest_points(surface, data)
        rows = rational_basis(surface, uv[:, 0], uv[:, 1])["value"]
        return Assignment(targets, data, uv, rows)

    def loss(self, points, assignment) -> LossBreakdown:
        cfg = self.config
        assignment = self._as_assignment(assignment)
        flat = np.asarray(points, dtype=float).reshape(-1, 3)
        r = self.basis.value @ flat - assignment.targets
        s_uu = self.basis.d_uu @ flat
        s_uv = self.basis.d_uv @ flat
        chamfer = float((r * r).sum())
        curv11 = float((s_uu * s_uu).sum()) * self._curv_scale
        curv12 = float((s_uv * s_uv).sum()) * self._curv_scale
        prox = proximity_loss(flat.reshape(self.shape))
        coverage = 0.0
        if len(assignment.data):
            e = assignment.rows @ flat - assignment.data
            coverage = float((e * e).sum()) * self.n_samples / len(e)
        total = (chamfer + cfg.lambda_curv11 * curv11 + cfg.lambda_curv12 * curv12
                 + cfg.lambda_proximity * prox + cfg.lambda_coverage * coverage)
        return LossBreakdown(total, chamfer, curv11, curv12, prox, coverage)

    def gradient(self, points, assignment) -> np.ndarray:
        cfg = self.config
        assignment = self._as_assignment(assignment)
        b = self.basis
        flat = np.asarray(points, dtype=float).reshape(-1, 3)
        grad = 2.0 * b.value.T @ (b.value @ flat - assignment.targets)
        if cfg.lambda_curv11:
            grad += 2.0 * cfg.lambda_curv11 * self._curv_scale * (b.d_uu.T @ (b.d_uu @ flat))
        if cfg.lambda_curv12:
            grad += 2.0 * cfg.lambda_curv12 * self._curv_scale * (b.d_uv.T @ (b.d_uv @ flat))
        if cfg.lambda_coverage and len(assignment.data):
            rows = assignment.rows
            scale = 2.0 * cfg.lambda_coverage * self.n_samples / len(rows)
            grad += scale * (rows.T @ (rows @ flat - assignment.data))
        grad = grad.reshape(self.shape)
        if cfg.lambda_proximity:
            grad += cfg.lambda_proximity * proximity_gradient(flat.reshape(self.shape))
        return grad

    @staticmethod
    def _as_assignment(assignment) -> Assignment:
        # a bare target array means samples-to-data only
        if isinstance(assignment, Assignment):
            return assignment
        return Assignment(np.asarray(assignment, dtype=float), np.empty((0, 3)),
                          np.empty((0, 2)), np.empty((0, 0)))


def _data_index(data) -> NearestNeighborIndex:
    return data if isinstance(data, NearestNeighborIndex) else NearestNeighborIndex(as_points(data, "data"))


def total_loss(surface: NurbsSurface, data, config: RefineConfig = RefineConfig()) -> LossBreakdown:
    problem = RefineProblem(surface, config)
    index = _data_index(data)
    return problem.loss(surface.points, problem.assign(surface.points, index))


def loss_gradient(surface: NurbsSurface, data, config: RefineConfig = RefineConfig()) -> np.ndarray:
    """Gradient of :func:`total_loss` w.r.t. the control points, correspondences frozen."""
    problem = RefineProblem(surface, config)
    index = _data_index(data)
    return problem.gradient(surface.points, problem.assign(surface.points, index))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(state: AdamState, gradient, lr: float,
              config: RefineConfig = RefineConfig()) -> Tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update; returns the parameter delta and new state."""
    g = np.asarray(gradient, dtype=float)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient; Adam step rejected")
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * (g * g)
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    delta = -lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return delta, AdamState(m, v, t)


@dataclass
class RefineResult:
    surface: NurbsSurface
    trace: List[LossBreakdown] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)

    @property
    def final(self) -> LossBreakdown:
        return self.trace[-1]


def refine(surface: NurbsSurface, data, config: RefineConfig = RefineConfig()) -> RefineResult:
    """Adam on the control points with correspondences refreshed every iteration.

    ``trace[t]`` is the loss before update ``t``; one extra entry holds the
    loss of the returned surface, so the trace has ``n_iterations + 1`` items.
    """
    index = _data_index(data)
    problem = RefineProblem(surface, config)
    coverage = problem.coverage_data(index)
    points = np.array(surface.points, dtype=float)
    state = AdamState.zeros(points.shape)
    result = RefineResult(surface)
    assignment = None
    for t in range(config.n_iterations):
        assignment = problem.assign(points, index, coverage, assignment)
        result.trace.append(problem.loss(points, assignment))
        lr = learning_rate(t, config)
        result.learning_rates.append(lr)
        delta, state = adam_step(state, problem.gradient(points, assignment), lr, config)
        points = points + delta
    assignment = problem.assign(points, index, coverage, assignment)
    result.trace.append(problem.loss(points, assignment))
    result.surface = surface.with_points(points)
    return result
