"""Synthetic leaves with known ground truth, brute-force oracles, and a
desk-scale benchmark harness."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .leaf import check_genome, decode_genome, leaf_surface, rotation_z
from .metrics import as_points
from .nurbs import NurbsSurface, closest_points, evaluate_grid, evaluate_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    genome: Tuple[float, ...]
    n_points: int = 2000
    noise_sigma: float = 0.0          # fraction of leaf length
    occlusion_fraction: float = 0.0
    seed: int = 0
    scale_mm: float = 600.0           # leaf length in mm
    rotation: float = 0.0             # azimuth about the stalk (origin)
    base_height_mm: float = 0.0

    def __post_init__(self):
        if self.n_points < 100:
            raise InvalidInputError("n_points must be at least 100")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise InvalidInputError("occlusion_fraction must lie in [0, 1)")
        if not self.scale_mm > 0:
            raise InvalidInputError("scale_mm must be positive")


def sample_leaf_genome(rng) -> np.ndarray:
    """A plausible, in-bounds leaf: tapered width, arched and drooping midrib."""
    rng = np.random.default_rng(rng)
    t = np.linspace(0.0, 1.0, 6)
    x_raw = rng.uniform(0.5, 0.9, 6)
    y_mid = np.clip(rng.uniform(-0.04, 0.04) + rng.uniform(-0.05, 0.05) * t, -0.1, 0.1)
    width = rng.uniform(0.08, 0.17)
    dy = np.empty(6)
    dy[[0, 5]] = rng.uniform(0.005, 0.04, 2)
    dy[1:5] = np.clip(width * (0.7 + 0.3 * np.sin(np.pi * t[1:5])), 0.05, 0.2)
    arch = rng.uniform(0.1, 0.35)
    droop = rng.uniform(0.0, 0.3)
    height = 0.35 + arch * 4.0 * t * (1.0 - t) - droop * t ** 2
    fold = rng.uniform(0.0, 0.05)
    z = np.empty(14)
    z[0], z[5] = height[0], height[5]
    z[1:5] = height[1:5] + fold       # bottom row
    z[6:10] = height[1:5]             # midrib
    z[10:14] = height[1:5] + fold     # top row
    genome = np.concatenate([x_raw, y_mid, dy, np.clip(z, 0.0, 1.0)])
    return check_genome(genome)


def ground_truth_surface(spec: SynthSpec) -> NurbsSurface:
    """Decoded genome with its base on the stalk axis, scaled and rotated to mm."""
    pts = decode_genome(spec.genome)
    length = pts[1, -1, 0] - pts[1, 0, 0]
    base = np.array([pts[1, 0, 0], pts[1, 0, 1], 0.0])
    mm = (pts - base) * (spec.scale_mm / length)
    mm = mm @ rotation_z(spec.rotation).T
    mm[..., 2] += spec.base_height_mm
    return leaf_surface(mm)


def generate_leaf(spec: SynthSpec) -> Tuple[np.ndarray, NurbsSurface]:
    """Sample a noisy, partially occluded cloud from a ground-truth leaf (mm)."""
    surface = ground_truth_surface(spec)
    rng = np.random.default_rng(spec.seed)
    uv = rng.random((spec.n_points, 2))
    f = spec.occlusion_fraction
    if f > 0:
        a = rng.uniform(f, 1.0)
        b = f / a
        u0 = rng.uniform(0.0, 1.0 - a)
        v0 = rng.uniform(0.0, 1.0 - b)
        hidden = ((uv[:, 0] >= u0) & (uv[:, 0] <= u0 + a)
                  & (uv[:, 1] >= v0) & (uv[:, 1] <= v0 + b))
        uv = uv[~hidden]
    cloud = evaluate_points(surface, uv[:, 0], uv[:, 1])
    if spec.noise_sigma > 0:
        cloud = cloud + rng.normal(0.0, spec.noise_sigma * spec.scale_mm, cloud.shape)
    return cloud, surface


def brute_force_nearest(x, y) -> Tuple[np.ndarray, np.ndarray]:
    """For every point of ``x`` the lowest-index nearest point of ``y``.

    Returns ``(indices, squared_distances)`` from an exhaustive scan.
    """
    x = as_points(x, "X")
    y = as_points(y, "Y")
    idx = np.empty(len(x), dtype=int)
    sq = np.empty(len(x))
    for i, p in enumerate(x):
        d = y - p
        dist = (d * d).sum(axis=-1)
        j = int(np.argmin(dist))  # argmin returns the first minimum
        idx[i], sq[i] = j, dist[j]
    return idx, sq


def finite_difference_gradient(fn: Callable[[np.ndarray], float], params, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``fn`` in every coordinate of ``params``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(params, dtype=float)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn(x)
        flat[i] = orig - h
        f_minus = fn(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def surface_distance(a: NurbsSurface, b: NurbsSurface, resolution=(100, 25)) -> float:
    """Symmetric mean point-to-surface distance between two surfaces.

    Lattice samples of each surface are projected onto the other, so the
    value does not depend on how either surface is parametrized.
    """
    sa = evaluate_grid(a, *resolution).flat_positions()
    sb = evaluate_grid(b, *resolution).flat_positions()
    _, foot_a = closest_points(b, sa)
    _, foot_b = closest_points(a, sb)
    return 0.5 * float(np.linalg.norm(foot_a - sa, axis=1).mean()
                       + np.linalg.norm(foot_b - sb, axis=1).mean())


def plant_specs(n_leaves: int, seed: int, n_points: int = 2000, noise_sigma: float = 0.005,
                occlusion_max: float = 0.1, scale_range=(450.0, 800.0)) -> List[SynthSpec]:
    """Leaves alternating roughly 180 degrees apart up a stalk at the origin."""
    rng = np.random.default_rng(seed)
    start = rng.uniform(-np.pi, np.pi)
    specs = []
    for i in range(n_leaves):
        rotation = start + np.pi * i + rng.normal(0.0, 0.3)
        specs.append(SynthSpec(
            genome=tuple(sample_leaf_genome(rng)),
            n_points=n_points,
            noise_sigma=noise_sigma,
            occlusion_fraction=float(rng.uniform(0.0, occlusion_max)),
            seed=int(rng.integers(2 ** 31)),
            scale_mm=float(rng.uniform(*scale_range)),
            rotation=float((rotation + np.pi) % (2 * np.pi) - np.pi),
            base_height_mm=150.0 * (i + 1),
        ))
    return specs


def write_plant(directory, specs: Sequence[SynthSpec], fmt: str = "xyz") -> List[Path]:
    """Write ``leaf_<i>.<fmt>`` files plus a ground-truth JSON sidecar."""
    from .pipeline import save_point_cloud

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    truth = {}
    for i, spec in enumerate(specs, start=1):
        cloud, surface = generate_leaf(spec)
        path = directory / f"leaf_{i}.{fmt}"
        save_point_cloud(path, cloud)
        paths.append(path)
        truth[f"leaf_{i}"] = {
            "genome": list(spec.genome), "rotation": spec.rotation,
            "scale_mm": spec.scale_mm, "noise_sigma": spec.noise_sigma,
            "occlusion_fraction": spec.occlusion_fraction, "seed": spec.seed,
            "control_points": surface.points.tolist(),
        }
    with open(directory / "ground_truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
    return paths


@dataclass
class BenchmarkResult:
    rows: List[dict] = field(default_factory=list)
    plants: List[dict] = field(default_factory=list)

    @property
    def pso_seconds(self) -> float:
        return sum(p["pso_seconds"] for p in self.plants)

    @property
    def refine_seconds(self) -> float:
        return sum(p["refine_seconds"] for p in self.plants)


def run_benchmark(n_plants: int, leaves_per_plant: int, pso_config, refine_config,
                  seed: int = 0, out_dir=None, parallelism: int = 1,
                  n_points: int = 2000, noise_sigma: float = 0.005,
                  occlusion_max: float = 0.1) -> BenchmarkResult:
    """Fit synthetic plants and tabulate Table-2 style distances and timings.

    With ``out_dir`` set, writes ``distances.csv``, ``timings.json`` and
    ``runtime_histogram.csv`` (one row per plant).
    """
    from .pipeline import PlantDataset, fit_plant

    result = BenchmarkResult()
    seeds = np.random.SeedSequence(seed).generate_state(n_plants)
    for p in range(n_plants):
        plant_id = f"synth_{p}"
        specs = plant_specs(leaves_per_plant, int(seeds[p]), n_points, noise_sigma, occlusion_max)
        leaves = [(f"leaf_{i + 1}", generate_leaf(s)[0]) for i, s in enumerate(specs)]
        dataset = PlantDataset(plant_id, leaves)
        start = time.perf_counter()
        _, report = fit_plant(dataset, pso_config, refine_config, parallelism, seed=int(seeds[p]))
        wall = time.perf_counter() - start
        for leaf in report.leaves:
            result.rows.append({
                "plant_id": plant_id, "leaf_id": leaf.leaf_id, "status": leaf.status,
                "after_pso_mm": leaf.distance_after_pso_mm,
                "after_refine_mm": leaf.distance_after_refine_mm,
                "pso_seconds": leaf.pso_seconds, "refine_seconds": leaf.refine_seconds,
            })
        result.plants.append({
            "plant_id": plant_id, "n_leaves": leaves_per_plant,
            "pso_seconds": report.pso_seconds, "refine_seconds": report.refine_seconds,
            "wall_seconds": wall,
        })
        logger.info("%s: pso %.1fs refine %.1fs", plant_id, report.pso_seconds, report.refine_seconds)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fields = ["plant_id", "leaf_id", "status", "after_pso_mm", "after_refine_mm",
                  "pso_seconds", "refine_seconds"]
        with open(out / "distances.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(result.rows)
        with open(out / "runtime_histogram.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["plant_id", "total_seconds"])
            for plant in result.plants:
                writer.writerow([plant["plant_id"], plant["pso_seconds"] + plant["refine_seconds"]])
        summary = {
            "plants": result.plants,
            "pso_seconds_total": result.pso_seconds,
            "refine_seconds_total": result.refine_seconds,
        }
        with open(out / "timings.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return result
