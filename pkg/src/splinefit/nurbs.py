"""NURBS surfaces: basis functions, evaluation and control-point derivatives.

Control points are stored as an ``(n_v, n_u, 3)`` array.  The first axis runs
across the leaf width (parameter ``v``), the second along its length
(parameter ``u``).  Entry ``[r, c]`` is therefore weighted by
``N_c(u) * N_r(v)``.

All derivative information with respect to the control points is linear:
for fixed weights and knots a sample ``S(u, v)`` equals ``R(u, v) @ P`` where
``R`` is the row of rational basis values.  :class:`GridBasis` caches these
rows (and their second parametric derivatives) for a fixed sampling lattice so
that optimizers can evaluate a surface with one matrix product.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError

# endpoint clamp for second derivatives
SECOND_DERIVATIVE_EPS = 1e-9


def clamped_uniform_knots(n_ctrl: int, degree: int) -> np.ndarray:
    """Clamped knot vector on [0, 1] with uniformly spaced interior knots.

    >>> clamped_uniform_knots(6, 3).tolist()
    [0.0, 0.0, 0.0, 0.0, 0.3333333333333333, 0.6666666666666666, 1.0, 1.0, 1.0, 1.0]
    """
    if degree < 0 or n_ctrl < degree + 1:
        raise ConfigurationError(
            f"need at least degree+1={degree + 1} control points, got {n_ctrl}"
        )
    n_interior = n_ctrl - degree - 1
    interior = np.arange(1, n_interior + 1, dtype=float) / (n_interior + 1)
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def check_knots(knots: np.ndarray, n_ctrl: int, degree: int) -> None:
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or len(knots) != n_ctrl + degree + 1:
        raise ConfigurationError(
            f"knot vector must have n_ctrl + degree + 1 = {n_ctrl + degree + 1} values"
        )
    if np.any(np.diff(knots) < 0):
        raise ConfigurationError("knot vector must be non-decreasing")
    if not (np.all(knots[: degree + 1] == 0.0) and np.all(knots[-degree - 1:] == 1.0)):
        raise ConfigurationError("knot vector must be clamped to [0, 1]")


def _as_params(u, knots: np.ndarray) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(~np.isfinite(u)) or np.any(u < knots[0]) or np.any(u > knots[-1]):
        raise DomainError(f"parameter outside [{knots[0]}, {knots[-1]}]")
    return u


def _basis_table(knots: np.ndarray, degree: int, u: np.ndarray) -> list:
    """Cox-de Boor values for every degree 0..degree, each of shape (m, n_p)."""
    k = knots
    col = u[:, None]
    n0 = ((k[:-1] <= col) & (col < k[1:])).astype(float)
    # last non-degenerate span is closed so that u = 1 is defined
    at_end = u == k[-1]
    if np.any(at_end):
        last = np.nonzero(k[:-1] < k[1:])[0][-1]
        n0[at_end] = 0.0
        n0[at_end, last] = 1.0
    table = [n0]
    n_span = len(k) - 1
    for p in range(1, degree + 1):
        prev = table[-1]
        i = np.arange(n_span - p)
        d1 = k[i + p] - k[i]
        d2 = k[i + p + 1] - k[i + 1]
        # 0/0 terms contribute nothing
        a = np.where(d1 > 0, (col - k[i]) / np.where(d1 > 0, d1, 1.0), 0.0)
        b = np.where(d2 > 0, (k[i + p + 1] - col) / np.where(d2 > 0, d2, 1.0), 0.0)
        table.append(a * prev[:, :-1] + b * prev[:, 1:])
    return table


def _derivative(table: list, knots: np.ndarray, p: int, order: int) -> np.ndarray:
    if order == 0:
        return table[p]
    n = len(knots) - 1 - p
    if p == 0:
        return np.zeros((table[0].shape[0], n))
    lower = _derivative(table, knots, p - 1, order - 1)
    i = np.arange(n)
    d1 = knots[i + p] - knots[i]
    d2 = knots[i + p + 1] - knots[i + 1]
    c1 = np.where(d1 > 0, p / np.where(d1 > 0, d1, 1.0), 0.0)
    c2 = np.where(d2 > 0, p / np.where(d2 > 0, d2, 1.0), 0.0)
    return c1 * lower[:, :-1] - c2 * lower[:, 1:]


def basis_matrix(knots, degree: int, u, order: int = 0) -> np.ndarray:
    """Basis values and parametric derivatives at many parameters.

    Returns an array of shape ``(order + 1, len(u), n_ctrl)`` whose slice ``d``
    holds the ``d``-th derivative of every basis function.
    """
    knots = np.asarray(knots, dtype=float)
    u = _as_params(u, knots)
    table = _basis_table(knots, degree, u)
    return np.stack([_derivative(table, knots, degree, d) for d in range(order + 1)])


def basis_functions(knots, degree: int, u: float) -> np.ndarray:
    """All ``N_{i,degree}(u)`` as a dense vector over the control indices."""
    return basis_matrix(knots, degree, [u])[0, 0]


@dataclass(frozen=True, eq=False)
class NurbsSurface:
    """Immutable rational tensor-product surface."""

    points: np.ndarray
    weights: np.ndarray
    knots_u: np.ndarray
    knots_v: np.ndarray
    degree_u: int
    degree_v: int

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        weights = np.array(self.weights, dtype=float)
        knots_u = np.array(self.knots_u, dtype=float)
        knots_v = np.array(self.knots_v, dtype=float)
        if points.ndim != 3 or points.shape[2] != 3:
            raise ConfigurationError("control points must have shape (n_v, n_u, 3)")
        if weights.shape != points.shape[:2]:
            raise ConfigurationError("weights must match the control grid shape")
        if not np.all(np.isfinite(points)):
            raise ConfigurationError("control points must be finite")
        if not np.all(weights > 0):
            raise ConfigurationError("weights must be positive")
        n_v, n_u = weights.shape
        if not (1 <= self.degree_u <= n_u - 1 and 1 <= self.degree_v <= n_v - 1):
            raise ConfigurationError(
                f"degrees ({self.degree_u}, {self.degree_v}) incompatible with a "
                f"{n_v}x{n_u} grid"
            )
        check_knots(knots_u, n_u, self.degree_u)
        check_knots(knots_v, n_v, self.degree_v)
        for name, arr in (("points", points), ("weights", weights),
                          ("knots_u", knots_u), ("knots_v", knots_v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_u(self) -> int:
        return self.points.shape[1]

    @property
    def n_v(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "NurbsSurface":
        return NurbsSurface(points, self.weights, self.knots_u, self.knots_v,
                            self.degree_u, self.degree_v)

    def transformed(self, matrix: np.ndarray, offset=(0.0, 0.0, 0.0)) -> "NurbsSurface":
        """Apply ``x -> matrix @ x + offset`` to every control point."""
        pts = self.points @ np.asarray(matrix, dtype=float).T + np.asarray(offset, dtype=float)
        return self.with_points(pts)


def make_surface(points, degree_u: int = 3, degree_v: int = 2,
                 weights: Optional[np.ndarray] = None) -> NurbsSurface:
    """Surface over clamped uniform knots; unit weights unless given."""
    points = np.asarray(points, dtype=float)
    n_v, n_u = points.shape[:2]
    if weights is None:
        weights = np.ones((n_v, n_u))
    return NurbsSurface(points, weights, clamped_uniform_knots(n_u, degree_u),
                        clamped_uniform_knots(n_v, degree_v), degree_u, degree_v)


def rational_basis(surface: NurbsSurface, u, v, order: int = 0) -> dict:
    """Rational basis rows for paired parameter arrays ``u`` and ``v``.

    Returns a dict with key ``"value"`` (shape ``(m, n_v * n_u)``) and, for
    ``order >= 1``, ``"u"``, ``"v"``; for ``order >= 2`` also ``"uu"`` and
    ``"uv"``.  Row ``k`` of each entry maps the flattened control points to
    the corresponding quantity at ``(u[k], v[k])``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ValueError("u and v must have the same shape")
    bu = basis_matrix(surface.knots_u, surface.degree_u, u, order)
    bv = basis_matrix(surface.knots_v, surface.degree_v, v, order)
    w = surface.weights

    def weighted(du: int, dv: int) -> np.ndarray:
        return bv[dv][:, :, None] * bu[du][:, None, :] * w

    g = weighted(0, 0)
    big_w = g.sum(axis=(1, 2))[:, None, None]
    r = g / big_w
    m = len(u)
    out = {"value": r.reshape(m, -1)}
    if order >= 1:
        g_u, g_v = weighted(1, 0), weighted(0, 1)
        w_u = g_u.sum(axis=(1, 2))[:, None, None]
        w_v = g_v.sum(axis=(1, 2))[:, None, None]
        r_u = (g_u - r * w_u) / big_w
        r_v = (g_v - r * w_v) / big_w
        out["u"] = r_u.reshape(m, -1)
        out["v"] = r_v.reshape(m, -1)
    if order >= 2:
        g_uu, g_uv = weighted(2, 0), weighted(1, 1)
        w_uu = g_uu.sum(axis=(1, 2))[:, None, None]
        w_uv = g_uv.sum(axis=(1, 2))[:, None, None]
        r_uu = (g_uu - 2.0 * r_u * w_u - r * w_uu) / big_w
        r_uv = (g_uv - r_u * w_v - r_v * w_u - r * w_uv) / big_w
        out["uu"] = r_uu.reshape(m, -1)
        out["uv"] = r_uv.reshape(m, -1)
    return out


def evaluate_points(surface: NurbsSurface, u, v) -> np.ndarray:
    """Evaluate the surface at paired parameters; returns ``(m, 3)``."""
    rows = rational_basis(surface, u, v)["value"]
    return rows @ surface.points.reshape(-1, 3)


def evaluate_surface(surface: NurbsSurface, u: float, v: float) -> np.ndarray:
    return evaluate_points(surface, [u], [v])[0]


def control_point_jacobian(surface: NurbsSurface, u: float, v: float) -> np.ndarray:
    """dS/dP for every control point, shape ``(n_v, n_u)``.

    The same scalar applies to each of the three coordinates of a point.
    """
    row = rational_basis(surface, [u], [v])["value"][0]
    return row.reshape(surface.n_v, surface.n_u)


def _clamp_interior(t):
    return np.clip(t, SECOND_DERIVATIVE_EPS, 1.0 - SECOND_DERIVATIVE_EPS)


def second_derivatives(surface: NurbsSurface, u: float, v: float) -> Tuple[np.ndarray, np.ndarray]:
    """``(d2S/du2, d2S/dudv)`` at ``(u, v)``; endpoints use one-sided limits."""
    _as_params([u], surface.knots_u)
    _as_params([v], surface.knots_v)
    rows = rational_basis(surface, _clamp_interior([u]), _clamp_interior([v]), order=2)
    flat = surface.points.reshape(-1, 3)
    return rows["uu"][0] @ flat, rows["uv"][0] @ flat


def lattice_params(n_u: int, n_v: int) -> np.ndarray:
    """Uniform inclusive ``(n_v, n_u, 2)`` lattice of ``(u, v)`` pairs, v-major."""
    if n_u < 2 or n_v < 2:
        raise ConfigurationError("sample lattice needs at least 2x2 points")
    uu, vv = np.meshgrid(np.linspace(0.0, 1.0, n_u), np.linspace(0.0, 1.0, n_v))
    return np.stack([uu, vv], axis=-1)


@dataclass(frozen=True, eq=False)
class SampleGrid:
    params: np.ndarray      # (n_v, n_u, 2)
    positions: np.ndarray   # (n_v, n_u, 3)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.params.shape[1], self.params.shape[0]

    def flat_positions(self) -> np.ndarray:
        return self.positions.reshape(-1, 3)


def evaluate_grid(surface: NurbsSurface, n_u: int, n_v: int) -> SampleGrid:
    params = lattice_params(n_u, n_v)
    flat = params.reshape(-1, 2)
    positions = evaluate_points(surface, flat[:, 0], flat[:, 1])
    return SampleGrid(params, positions.reshape(n_v, n_u, 3))


@dataclass(frozen=True, eq=False)
class GridBasis:
    """Cached rational basis rows for one surface structure and lattice.

    Valid for any control-point positions as long as knots, degrees and
    weights are unchanged.  ``value @ P`` gives the samples, ``d_uu @ P`` and
    ``d_uv @ P`` the second parametric derivatives (one-sided at the edges).
    """

    n_u: int
    n_v: int
    params: np.ndarray
    value: np.ndarray
    d_uu: Optional[np.ndarray] = field(default=None)
    d_uv: Optional[np.ndarray] = field(default=None)

    @classmethod
    def for_surface(cls, surface: NurbsSurface, n_u: int, n_v: int,
                    derivatives: bool = True) -> "GridBasis":
        params = lattice_params(n_u, n_v)
        flat = params.reshape(-1, 2)
        value = rational_basis(surface, flat[:, 0], flat[:, 1])["value"]
        d_uu = d_uv = None
        if derivatives:
            rows = rational_basis(surface, _clamp_interior(flat[:, 0]),
                                  _clamp_interior(flat[:, 1]), order=2)
            d_uu, d_uv = rows["uu"], rows["uv"]
        return cls(n_u, n_v, params, value, d_uu, d_uv)

    def samples(self, points: np.ndarray) -> np.ndarray:
        """Surface samples for control points of shape ``(..., n_v, n_u, 3)``."""
        points = np.asarray(points, dtype=float)
        flat = points.reshape(points.shape[:-3] + (-1, 3))
        return np.matmul(self.value, flat)


def corner_points(surface: NurbsSurface) -> Sequence[np.ndarray]:
    """Control points interpolated at (u, v) = (0,0), (1,0), (0,1), (1,1)."""
    p = surface.points
    return p[0, 0], p[0, -1], p[-1, 0], p[-1, -1]


def closest_points(surface: NurbsSurface, points, init_resolution=(128, 32),
                   iterations: int = 8, init_uv: Optional[np.ndarray] = None
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Foot points of ``points`` on ``surface``.

    Starts from the nearest sample of a lattice (or ``init_uv``) and runs
    clamped Gauss-Newton steps in (u, v).  Returns ``(uv, foot_positions)``.
    """
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if init_uv is None:
        grid = evaluate_grid(surface, *init_resolution)
        _, nearest = cKDTree(grid.flat_positions()).query(pts)
        uv = grid.params.reshape(-1, 2)[nearest].copy()
    else:
        uv = np.array(init_uv, dtype=float).reshape(-1, 2)
    flat = surface.points.reshape(-1, 3)
    for _ in range(iterations):
        rows = rational_basis(surface, uv[:, 0], uv[:, 1], order=1)
        r = rows["value"] @ flat - pts
        s_u = rows["u"] @ flat
        s_v = rows["v"] @ flat
        a = (s_u * s_u).sum(1)
        b = (s_u * s_v).sum(1)
        c = (s_v * s_v).sum(1)
        g_u = (s_u * r).sum(1)
        g_v = (s_v * r).sum(1)
        det = a * c - b * b
        scale = np.maximum(a, c)
        tiny = 1e-24 * scale + 1e-300
        # well-conditioned when both tangents are non-degenerate and not parallel
        ok = (det > 1e-10 * a * c) & (a > tiny) & (c > tiny)
        safe = np.where(ok, det, 1.0)
        a_safe = np.where(a > tiny, a, 1.0)
        c_safe = np.where(c > tiny, c, 1.0)
        # singular system (e.g. a zero-width strip): 1-D Newton along the
        # dominant tangent
        along_u = ~ok & (a >= c) & (a > 1e-300)
        along_v = ~ok & (c > a)
        du = np.where(ok, -(c * g_u - b * g_v) / safe, np.where(along_u, -g_u / a_safe, 0.0))
        dv = np.where(ok, -(a * g_v - b * g_u) / safe, np.where(along_v, -g_v / c_safe, 0.0))
        step = uv + np.stack([du, dv], axis=1)
        new = np.clip(step, 0.0, 1.0)
        # on an active bound, slide along the free coordinate instead
        hit_u = ok & (step[:, 0] != new[:, 0]) & (step[:, 1] == new[:, 1])
        hit_v = ok & (step[:, 1] != new[:, 1]) & (step[:, 0] == new[:, 0])
        dv_1d = -(g_v + b * (new[:, 0] - uv[:, 0])) / c_safe
        du_1d = -(g_u + b * (new[:, 1] - uv[:, 1])) / a_safe
        new[hit_u, 1] = np.clip(uv[hit_u, 1] + dv_1d[hit_u], 0.0, 1.0)
        new[hit_v, 0] = np.clip(uv[hit_v, 0] + du_1d[hit_v], 0.0, 1.0)
        uv = new
    foot = rational_basis(surface, uv[:, 0], uv[:, 1])["value"] @ flat
    return uv, foot
