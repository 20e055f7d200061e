"""Leaf genome: a bounded parameter vector decoded into a 3x6 control grid.

Genome layout (32 values, optionally a 33rd)::

    [0:6]    x_raw    step lengths along the leaf, cumulatively summed
    [6:12]   y_mid    midrib y per column
    [12:18]  dy       half-width per column
    [18:32]  z        14 heights
    [32]     rotation azimuth about the vertical axis (phyllotaxy search only)

Rows of the decoded grid run across the width (row 1 is the midrib), columns
along the length.  Both end columns collapse their three rows onto one height
so the base and tip taper.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateInputError, InvalidGenomeError
from .metrics import as_points
from .nurbs import NurbsSurface, make_surface

N_ROWS, N_COLS = 3, 6
GENOME_SIZE = 32
DEGREE_LENGTH, DEGREE_WIDTH = 3, 2

X_STEP_BOUNDS = (0.2, 1.2)
Y_MID_BOUNDS = (-0.1, 0.1)
DY_END_BOUNDS = (0.0, 0.1)
DY_MID_BOUNDS = (0.05, 0.2)
Z_BOUNDS = (0.0, 1.0)
ROTATION_BOUNDS = (-np.pi, np.pi)

# cumsum(x_raw) / X_SCALE; a mid-bounds genome then spans 5/3 units, which is
# the length of a leaf whose largest |x| about its centroid is ~1.
X_SCALE = 0.5 * N_COLS * 0.5 * (X_STEP_BOUNDS[0] + X_STEP_BOUNDS[1])

# z-genome index per (row, col)
Z_INDEX = np.array([
    [0, 10, 11, 12, 13, 5],
    [0, 6, 7, 8, 9, 5],
    [0, 1, 2, 3, 4, 5],
])


def genome_bounds(with_rotation: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds for every genome slot."""
    dy_lo = [DY_END_BOUNDS[0]] + [DY_MID_BOUNDS[0]] * 4 + [DY_END_BOUNDS[0]]
    dy_hi = [DY_END_BOUNDS[1]] + [DY_MID_BOUNDS[1]] * 4 + [DY_END_BOUNDS[1]]
    lower = np.concatenate([
        np.full(6, X_STEP_BOUNDS[0]), np.full(6, Y_MID_BOUNDS[0]), dy_lo,
        np.full(14, Z_BOUNDS[0]),
    ])
    upper = np.concatenate([
        np.full(6, X_STEP_BOUNDS[1]), np.full(6, Y_MID_BOUNDS[1]), dy_hi,
        np.full(14, Z_BOUNDS[1]),
    ])
    if with_rotation:
        lower = np.append(lower, ROTATION_BOUNDS[0])
        upper = np.append(upper, ROTATION_BOUNDS[1])
    return lower, upper


@dataclass(frozen=True)
class LeafGenome:
    x_raw: Tuple[float, ...]
    y_mid: Tuple[float, ...]
    dy: Tuple[float, ...]
    z: Tuple[float, ...]
    rotation: Optional[float] = None

    @classmethod
    def from_array(cls, genome) -> "LeafGenome":
        g = check_genome(genome)
        return cls(tuple(g[0:6]), tuple(g[6:12]), tuple(g[12:18]), tuple(g[18:32]),
                   float(g[32]) if len(g) == 33 else None)

    def to_array(self) -> np.ndarray:
        parts = [self.x_raw, self.y_mid, self.dy, self.z]
        if self.rotation is not None:
            parts.append((self.rotation,))
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def check_genome(genome) -> np.ndarray:
    g = np.asarray(genome, dtype=float)
    if g.ndim != 1 or len(g) not in (GENOME_SIZE, GENOME_SIZE + 1):
        raise InvalidGenomeError(f"genome must have 32 or 33 values, got shape {g.shape}")
    lower, upper = genome_bounds(len(g) == GENOME_SIZE + 1)
    bad = np.nonzero(~((g >= lower) & (g <= upper)))[0]
    if len(bad):
        i = int(bad[0])
        raise InvalidGenomeError(
            f"genome[{i}] = {g[i]} outside [{lower[i]}, {upper[i]}]")
    return g


def _decode(g: np.ndarray) -> np.ndarray:
    """Vectorized decode of ``(..., >=32)`` genomes to ``(..., 3, 6, 3)``."""
    x = np.cumsum(g[..., 0:6], axis=-1) / X_SCALE
    y_mid = g[..., 6:12]
    dy = g[..., 12:18]
    z = g[..., 18:32]
    out = np.empty(g.shape[:-1] + (N_ROWS, N_COLS, 3))
    out[..., 0] = x[..., None, :]
    out[..., 0, :, 1] = y_mid + dy
    out[..., 1, :, 1] = y_mid
    out[..., 2, :, 1] = y_mid - dy
    out[..., 2] = z[..., Z_INDEX]
    return out


def decode_genome(genome) -> np.ndarray:
    """Control points ``(3, 6, 3)`` for an in-bounds genome (unit weights)."""
    return _decode(check_genome(genome))


def decode_many(genomes: np.ndarray) -> np.ndarray:
    """Decode a batch without bounds checks (the caller owns the box)."""
    return _decode(np.asarray(genomes, dtype=float))


def leaf_surface(points) -> NurbsSurface:
    """Cubic-by-quadratic surface over a 3x6 grid with clamped uniform knots."""
    return make_surface(points, DEGREE_LENGTH, DEGREE_WIDTH)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(angle: float) -> float:
    """Map to [-pi, pi)."""
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class NormalizationRecord:
    """Maps the normalized frame back to millimetres: rotate, scale, translate."""

    scale: float
    centroid: Tuple[float, float, float]
    rotation: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DegenerateInputError("normalization scale must be positive")

    def to_raw(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * (pts @ rotation_z(self.rotation).T) + np.asarray(self.centroid)

    def to_normalized(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float) - np.asarray(self.centroid)
        return (pts @ rotation_z(-self.rotation).T) / self.scale

    def inverse_scale(self, value_mm: float) -> float:
        return value_mm / self.scale


def apply_rotation(points, angle: float) -> np.ndarray:
    """Rotate a cloud about the vertical axis through its centroid."""
    pts = as_points(points)
    c = pts.mean(axis=0)
    return (pts - c) @ rotation_z(angle).T + c


def normalize_cloud(points, rotation: float = 0.0) -> Tuple[np.ndarray, NormalizationRecord]:
    """Center on the centroid, undo ``rotation``, divide by the largest |x|.

    With ``rotation`` set to the leaf azimuth the leaf's length lies along +x
    before the scale is measured.
    """
    pts = as_points(points)
    centroid = pts.mean(axis=0)
    aligned = (pts - centroid) @ rotation_z(-rotation).T
    scale = float(np.abs(aligned[:, 0]).max())
    if not scale > 1e-12 * max(1.0, float(np.abs(pts).max())):
        raise DegenerateInputError("cloud has no extent along x")
    record = NormalizationRecord(scale, tuple(float(c) for c in centroid), float(rotation))
    return aligned / scale, record


def denormalize_surface(surface: NurbsSurface, record: NormalizationRecord) -> NurbsSurface:
    return surface.with_points(record.to_raw(surface.points))


def normalize_surface(surface: NurbsSurface, record: NormalizationRecord) -> NurbsSurface:
    return surface.with_points(record.to_normalized(surface.points))
