"""Point-set distances and the exact nearest-neighbour index behind them."""
from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError

DEFAULT_LAMBDA_HD = 0.1
# cap on cloud size used inside the PSO fitness
MAX_FITNESS_POINTS = 20_000


def as_points(points, name: str = "points") -> np.ndarray:
    """Validate and return an ``(n, 3)`` float array with ``n >= 1``."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return (d * d).sum(axis=-1)


class NearestNeighborIndex:
    """Exact nearest-neighbour queries over a fixed point set.

    Backed by a k-d tree.  Candidate distances are recomputed from the
    coordinates so that results agree bit-for-bit with an exhaustive scan;
    ties go to the lowest point index.
    """

    def __init__(self, points):
        self.points = as_points(points)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, squared_distances)`` of the nearest points."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        n = len(self.points)
        k = min(4, n)
        _, cand = self._tree.query(q, k=k)
        cand = cand.reshape(len(q), k)
        sq = _sq_dist(self.points[cand], q[:, None, :])
        best = sq.min(axis=1)
        tied = sq == best[:, None]
        idx = np.where(tied, cand, n).min(axis=1)
        # every candidate tied: more equidistant points may exist beyond k
        if k < n:
            for row in np.nonzero(tied.all(axis=1))[0]:
                radius = np.sqrt(best[row]) * (1.0 + 1e-9) + 1e-300
                ball = np.asarray(self._tree.query_ball_point(q[row], radius), dtype=int)
                d = _sq_dist(self.points[ball], q[row])
                m = d.min()
                idx[row] = ball[d == m].min()
                best[row] = m
        return idx, best

    def sq_distances(self, queries) -> np.ndarray:
        """Squared nearest distances only (tie-break irrelevant)."""
        d, _ = self._tree.query(np.atleast_2d(queries), k=1)
        return d * d


PointsOrIndex = Union[np.ndarray, NearestNeighborIndex]


def build_index(points) -> NearestNeighborIndex:
    return NearestNeighborIndex(points)


def _index(target: PointsOrIndex, name: str) -> NearestNeighborIndex:
    if isinstance(target, NearestNeighborIndex):
        return target
    return NearestNeighborIndex(as_points(target, name))


def one_sided_chamfer(source, target: PointsOrIndex) -> float:
    """Sum over ``source`` of the squared distance to the nearest target point."""
    x = as_points(source, "source")
    _, sq = _index(target, "target").query(x)
    return float(sq.sum())


def chamfer_distance(x, y) -> float:
    """Symmetric Chamfer distance: a sum (not a mean) of squared distances."""
    x = as_points(x, "X")
    y = as_points(y, "Y")
    return one_sided_chamfer(x, y) + one_sided_chamfer(y, x)


def directed_hausdorff(x, target: PointsOrIndex) -> float:
    x = as_points(x, "X")
    _, sq = _index(target, "Y").query(x)
    return float(np.sqrt(sq.max()))


def hausdorff_distance(x, y) -> float:
    x = as_points(x, "X")
    y = as_points(y, "Y")
    return max(directed_hausdorff(x, y), directed_hausdorff(y, x))


def pso_fitness(x, y, lambda_hd: float = DEFAULT_LAMBDA_HD,
                y_index: Optional[NearestNeighborIndex] = None) -> float:
    """Chamfer distance plus ``lambda_hd`` times the Hausdorff distance.

    ``y_index`` may be passed to reuse an index already built over ``y``.
    """
    if lambda_hd < 0:
        raise ValueError("lambda_hd must be non-negative")
    x = as_points(x, "X")
    y = as_points(y, "Y")
    if y_index is None:
        y_index = NearestNeighborIndex(y)
    d_xy = y_index.sq_distances(x)
    d_yx = NearestNeighborIndex(x).sq_distances(y)
    chamfer = d_xy.sum() + d_yx.sum()
    hausdorff = np.sqrt(max(d_xy.max(), d_yx.max()))
    return float(chamfer + lambda_hd * hausdorff)


def report_distance_mm(surface_samples, data) -> float:
    """Symmetric mean nearest-neighbour distance (unsquared), in input units."""
    s = as_points(surface_samples, "surface_samples")
    d = as_points(data, "data")
    to_surface = np.sqrt(NearestNeighborIndex(s).sq_distances(d)).mean()
    to_data = np.sqrt(NearestNeighborIndex(d).sq_distances(s)).mean()
    return float(0.5 * (to_surface + to_data))


def subsample(points: np.ndarray, limit: int, seed: int) -> np.ndarray:
    """Seeded random subset of at most ``limit`` points, original order kept."""
    if len(points) <= limit:
        return points
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(points), size=limit, replace=False))
    return points[keep]
