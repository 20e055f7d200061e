"""Point-cloud I/O, per-plant orchestration, OBJ export and JSON reports.

All optimization happens in the normalized frame of each leaf; the report
and the exported meshes are in millimetres in the raw scanner frame.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CloudParseError, EmptyDatasetError, InvalidInputError
from .leaf import denormalize_surface
from .metrics import as_points, report_distance_mm
from .nurbs import NurbsSurface, evaluate_grid
from .pso import PsoConfig, extract_phyllotaxy, fit_initial_surface
from .refine import RefineConfig, refine

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "splinefit-report/1"
REPORT_RESOLUTION = (256, 64)
CLOUD_FORMATS = ("xyz", "ply")
_LEAF_FILE = re.compile(r"^leaf_(\d+)\.(xyz|ply)$", re.IGNORECASE)
_STALK_FILE = re.compile(r"^stalk.*\.(xyz|ply)$", re.IGNORECASE)


# ---------------------------------------------------------------- clouds

def _detect_format(path: Path, fmt: Optional[str]) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in CLOUD_FORMATS:
        raise InvalidInputError(f"{path}: unknown point-cloud format {fmt!r}")
    return fmt


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.replace(",", " ").split()
            if len(fields) < 3:
                raise CloudParseError(path, lineno, f"expected 3 coordinates, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields[:3]])
            except ValueError:
                raise CloudParseError(path, lineno, f"non-numeric coordinate in {text!r}") from None
    return np.array(rows, dtype=float).reshape(-1, 3)


def _read_ply(path: Path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(path, 1, "missing 'ply' magic")
    elements = []  # [name, count, [property names], has_list]
    fmt_seen = False
    body = None
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 3 or parts[1] != "ascii":
                raise CloudParseError(path, i, "only ASCII PLY is supported")
            fmt_seen = True
        elif key == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise CloudParseError(path, i, f"malformed element line {line!r}")
            elements.append([parts[1], int(parts[2]), [], False])
        elif key == "property":
            if not elements:
                raise CloudParseError(path, i, "property before any element")
            if len(parts) >= 2 and parts[1] == "list":
                if len(parts) != 5:
                    raise CloudParseError(path, i, f"malformed list property {line!r}")
                elements[-1][2].append(parts[4])
                elements[-1][3] = True
            elif len(parts) == 3:
                elements[-1][2].append(parts[2])
            else:
                raise CloudParseError(path, i, f"malformed property line {line!r}")
        elif key == "end_header":
            body = i
            break
        else:
            raise CloudParseError(path, i, f"unexpected header keyword {key!r}")
    if body is None:
        raise CloudParseError(path, len(lines), "missing end_header")
    if not fmt_seen:
        raise CloudParseError(path, body, "missing format line")

    lineno = body
    for name, count, props, has_list in elements:
        if name != "vertex":
            lineno += count  # one line per item of other elements
            continue
        if has_list:
            raise CloudParseError(path, body, "list properties on vertices are not supported")
        try:
            cols = [props.index(axis) for axis in ("x", "y", "z")]
        except ValueError:
            raise CloudParseError(path, body, "vertex element lacks x, y, z") from None
        out = np.empty((count, 3))
        for k in range(count):
            lineno += 1
            if lineno > len(lines):
                raise CloudParseError(path, lineno, f"expected {count} vertices, file ends after {k}")
            fields = lines[lineno - 1].split()
            if len(fields) != len(props):
                raise CloudParseError(path, lineno, f"expected {len(props)} values, got {len(fields)}")
            try:
                out[k] = [float(fields[c]) for c in cols]
            except ValueError:
                raise CloudParseError(path, lineno, "non-numeric vertex coordinate") from None
        return out
    raise CloudParseError(path, body, "no vertex element")


def load_point_cloud(path, format: Optional[str] = None) -> np.ndarray:
    """Read an XYZ or ASCII-PLY cloud (millimetres) as an ``(n, 3)`` array."""
    path = Path(path)
    fmt = _detect_format(path, format)
    pts = _read_xyz(path) if fmt == "xyz" else _read_ply(path)
    if len(pts) == 0:
        raise EmptyDatasetError(f"{path}: no points")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError(f"{path}: non-finite coordinates")
    return pts


def save_point_cloud(path, points, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = _detect_format(path, format)
    pts = as_points(points)
    with open(path, "w") as fh:
        if fmt == "ply":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(pts)}\n")
            fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for x, y, z in pts.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


# ---------------------------------------------------------------- datasets

@dataclass
class PlantDataset:
    plant_id: str
    leaves: List[Tuple[str, np.ndarray]]
    paths: List[Path] = field(default_factory=list)
    stalk_xy: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.leaves:
            raise EmptyDatasetError(f"plant {self.plant_id!r} has no leaves")
        self.leaves = [(str(leaf_id), as_points(cloud, leaf_id)) for leaf_id, cloud in self.leaves]


def load_plant(directory, plant_id: Optional[str] = None) -> PlantDataset:
    """Load ``leaf_<n>.{xyz,ply}`` files ordered by ``n``.

    A ``stalk*`` cloud, if present, is not fitted; its horizontal centroid
    marks the stalk axis used to orient leaves.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyDatasetError(f"{directory} is not a directory")
    found = []
    stalk_xy = None
    for path in sorted(directory.iterdir()):
        m = _LEAF_FILE.match(path.name)
        if m:
            found.append((int(m.group(1)), path))
        elif _STALK_FILE.match(path.name):
            try:
                stalk = load_point_cloud(path)
            except (InvalidInputError, EmptyDatasetError, CloudParseError) as exc:
                logger.warning("ignoring unreadable stalk file %s: %s", path, exc)
                continue
            stalk_xy = (float(stalk[:, 0].mean()), float(stalk[:, 1].mean()))
    if not found:
        raise EmptyDatasetError(f"no leaf_*.xyz or leaf_*.ply files in {directory}")
    found.sort(key=lambda item: (item[0], item[1].name))
    leaves = [(p.stem, load_point_cloud(p)) for _, p in found]
    return PlantDataset(plant_id or directory.name, leaves, [p for _, p in found], stalk_xy)


# ---------------------------------------------------------------- reports

@dataclass
class LeafRecord:
    leaf_id: str
    status: str = "ok"
    error: Optional[str] = None
    n_points: int = 0
    genome: Optional[List[float]] = None
    rotation_rad: Optional[float] = None
    distance_after_pso_mm: Optional[float] = None
    distance_after_refine_mm: Optional[float] = None
    pso_fitness: Optional[float] = None
    pso_trace: Optional[dict] = None
    loss_trace: Optional[dict] = None
    control_points_mm: Optional[List] = None
    pso_seconds: float = 0.0
    refine_seconds: float = 0.0

    TIMING_FIELDS = ("pso_seconds", "refine_seconds")

    def to_dict(self, timings: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not timings:
            for key in self.TIMING_FIELDS:
                d.pop(key)
        return d


@dataclass
class FitReport:
    plant_id: str
    leaves: List[LeafRecord] = field(default_factory=list)
    seed: int = 0
    pso_config: dict = field(default_factory=dict)
    refine_config: dict = field(default_factory=dict)

    @property
    def pso_seconds(self) -> float:
        return sum(leaf.pso_seconds for leaf in self.leaves)

    @property
    def refine_seconds(self) -> float:
        return sum(leaf.refine_seconds for leaf in self.leaves)

    @property
    def n_failed(self) -> int:
        return sum(leaf.status != "ok" for leaf in self.leaves)

    def totals(self) -> dict:
        ok = [leaf for leaf in self.leaves if leaf.status == "ok"]
        mean = lambda key: float(np.mean([getattr(l, key) for l in ok])) if ok else None  # noqa: E731
        return {
            "n_leaves": len(self.leaves),
            "n_failed": self.n_failed,
            "mean_distance_after_pso_mm": mean("distance_after_pso_mm"),
            "mean_distance_after_refine_mm": mean("distance_after_refine_mm"),
        }

    def to_dict(self, timings: bool = False) -> dict:
        d = {
            "schema": REPORT_SCHEMA,
            "plant_id": self.plant_id,
            "seed": self.seed,
            "pso_config": self.pso_config,
            "refine_config": self.refine_config,
            "leaves": [leaf.to_dict(timings) for leaf in self.leaves],
            "totals": self.totals(),
        }
        if timings:
            d["totals"]["pso_seconds"] = self.pso_seconds
            d["totals"]["refine_seconds"] = self.refine_seconds
        return d

    def timings(self) -> dict:
        return {
            "plant_id": self.plant_id,
            "pso_seconds": self.pso_seconds,
            "refine_seconds": self.refine_seconds,
            "leaves": [{"leaf_id": l.leaf_id, "pso_seconds": l.pso_seconds,
                        "refine_seconds": l.refine_seconds} for l in self.leaves],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise InvalidInputError(f"unsupported report schema {d.get('schema')!r}")
        names = {f.name for f in dataclasses.fields(LeafRecord)}
        leaves = [LeafRecord(**{k: v for k, v in leaf.items() if k in names}) for leaf in d["leaves"]]
        return cls(d["plant_id"], leaves, d.get("seed", 0), d.get("pso_config", {}),
                   d.get("refine_config", {}))


def _dump(obj, path) -> None:
    # json writes floats with repr, i.e. round-trip precision (17 digits)
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w") as fh:
        fh.write(text + "\n")


def write_report(report: FitReport, path, timings: bool = False) -> None:
    """Write the report as JSON with sorted keys.

    Wall-clock timings are left out by default so that repeated runs give
    byte-identical files; see :func:`write_timings`.
    """
    _dump(report.to_dict(timings), path)


def write_timings(report: FitReport, path) -> None:
    _dump(report.timings(), path)


def read_report(path) -> FitReport:
    with open(path) as fh:
        return FitReport.from_dict(json.load(fh))


# ---------------------------------------------------------------- meshes

def export_obj(surface: NurbsSurface, path, resolution=(32, 8)) -> None:
    """Triangulated lattice mesh; vertices v-major, two triangles per quad."""
    n_u, n_v = resolution
    if n_u < 2 or n_v < 2:
        raise InvalidInputError("OBJ resolution must be at least (2, 2)")
    verts = evaluate_grid(surface, n_u, n_v).flat_positions()
    lines = [f"# splinefit surface {n_u}x{n_v}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
    for j in range(n_v - 1):
        for i in range(n_u - 1):
            a = j * n_u + i + 1
            b, c = a + 1, a + n_u
            d = c + 1
            lines.append(f"f {a} {b} {d}")
            lines.append(f"f {a} {d} {c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices ``(n, 3)`` and zero-based triangle indices ``(m, 3)``."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ValueError
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                        faces.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
            except ValueError:
                raise CloudParseError(path, lineno, f"malformed OBJ line {line.strip()!r}") from None
    if not verts:
        raise EmptyDatasetError(f"{path}: no vertices")
    return np.array(verts, dtype=float), np.array(faces, dtype=int).reshape(-1, 3)


# ---------------------------------------------------------------- fitting

def leaf_seed(seed: int, position: int) -> int:
    """Per-leaf seed derived from the plant seed and the leaf's position."""
    return int(np.random.SeedSequence([int(seed), int(position)]).generate_state(1)[0])


def _loss_summary(trace) -> dict:
    return {
        "n_iterations": len(trace) - 1,
        "initial": trace[0].as_dict(),
        "final": trace[-1].as_dict(),
        "min_total": min(b.total for b in trace),
    }


def fit_leaf(cloud, pso_config: PsoConfig = PsoConfig(), refine_config: RefineConfig = RefineConfig(),
             seed: int = 0, stalk_xy: Optional[Sequence[float]] = (0.0, 0.0),
             leaf_id: str = "leaf") -> Tuple[NurbsSurface, LeafRecord]:
    """Phyllotaxy, normalization, swarm fit, refinement, back to millimetres."""
    cloud = as_points(cloud, leaf_id)
    start = time.perf_counter()
    angle = extract_phyllotaxy(cloud, pso_config, seed=seed, stalk_xy=stalk_xy)
    initial = fit_initial_surface(cloud, angle, pso_config, seed=seed)
    pso_done = time.perf_counter()
    result = refine(initial.surface, initial.cloud, refine_config)
    refine_done = time.perf_counter()

    record = initial.record
    pso_mm = denormalize_surface(initial.surface, record)
    final_mm = denormalize_surface(result.surface, record)
    dense = lambda s: evaluate_grid(s, *REPORT_RESOLUTION).flat_positions()  # noqa: E731
    leaf = LeafRecord(
        leaf_id=leaf_id,
        n_points=len(cloud),
        genome=[float(g) for g in initial.genome],
        rotation_rad=float(angle),
        distance_after_pso_mm=report_distance_mm(dense(pso_mm), cloud),
        distance_after_refine_mm=report_distance_mm(dense(final_mm), cloud),
        pso_fitness=float(initial.fitness),
        pso_trace={"n_iterations": len(initial.trace), "initial": float(initial.trace[0]),
                   "final": float(initial.trace[-1])},
        loss_trace=_loss_summary(result.trace),
        control_points_mm=final_mm.points.tolist(),
        pso_seconds=pso_done - start,
        refine_seconds=refine_done - pso_done,
    )
    return final_mm, leaf


def _fit_task(args):
    leaf_id, cloud, pso_config, refine_config, seed, stalk_xy = args
    try:
        return fit_leaf(cloud, pso_config, refine_config, seed, stalk_xy, leaf_id)
    except Exception as exc:  # fault isolation: record and carry on
        logger.warning("leaf %s failed: %s", leaf_id, exc)
        return None, LeafRecord(leaf_id=leaf_id, status="failed", n_points=len(cloud),
                                error=f"{type(exc).__name__}: {exc}")


def fit_plant(dataset: PlantDataset, pso_config: PsoConfig = PsoConfig(),
              refine_config: RefineConfig = RefineConfig(), parallelism: int = 1,
              seed: Optional[int] = None) -> Tuple[List[Optional[NurbsSurface]], FitReport]:
    """Fit every leaf, up to ``parallelism`` at a time in worker processes.

    Leaf seeds depend only on the plant seed and leaf position, so results do
    not depend on ``parallelism``.  Failed leaves get ``None`` surfaces and a
    ``status="failed"`` record.
    """
    if parallelism < 1:
        raise InvalidInputError("parallelism must be >= 1")
    seed = pso_config.seed if seed is None else int(seed)
    stalk_xy = dataset.stalk_xy if dataset.stalk_xy is not None else (0.0, 0.0)
    tasks = [(leaf_id, cloud, pso_config, refine_config, leaf_seed(seed, i), stalk_xy)
             for i, (leaf_id, cloud) in enumerate(dataset.leaves)]
    if parallelism == 1 or len(tasks) == 1:
        results = [_fit_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(tasks))) as pool:
            results = list(pool.map(_fit_task, tasks))
    report = FitReport(
        plant_id=dataset.plant_id,
        leaves=[r[1] for r in results],
        seed=seed,
        pso_config=dataclasses.asdict(pso_config),
        refine_config=dataclasses.asdict(refine_config),
    )
    return [r[0] for r in results], report
