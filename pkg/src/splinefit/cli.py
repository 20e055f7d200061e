"""Command-line interface: ``splinefit {fit,fit-leaf,synth,bench,eval}``.

Exit codes: 0 on success, 2 when some leaves failed, 1 on a fatal error.
``SPLINEFIT_SEED`` overrides ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .errors import SplinefitError
from .metrics import chamfer_distance, hausdorff_distance, report_distance_mm
from .pso import PsoConfig
from .refine import RefineConfig

logger = logging.getLogger("splinefit")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

# full settings for real fits, desk-scale ones for synthetic runs
FULL = {"particles": 300, "pso_iters": 50, "refine_iters": 500}
DESK = {"particles": 60, "pso_iters": 30, "refine_iters": 200}


def _add_fit_flags(p: argparse.ArgumentParser, defaults: dict) -> None:
    g = p.add_argument_group("optimizer")
    g.add_argument("--particles", type=int, default=defaults["particles"])
    g.add_argument("--pso-iters", type=int, default=defaults["pso_iters"])
    g.add_argument("--lambda-hd", type=float, default=0.1)
    g.add_argument("--refine-iters", type=int, default=defaults["refine_iters"])
    g.add_argument("--lr", type=float, default=1e-2)
    g.add_argument("--lambda-curv11", type=float, default=1e-2)
    g.add_argument("--lambda-curv12", type=float, default=1e-4)
    g.add_argument("--lambda-prox", type=float, default=8e-4)
    g.add_argument("--lambda-coverage", type=float, default=RefineConfig.lambda_coverage,
                   help="data-to-surface term weight (0 disables it)")
    g.add_argument("--curvature-reduction", choices=("mean", "sum"),
                   default=RefineConfig.curvature_reduction)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallelism", type=int, default=1)


def _configs(args) -> tuple:
    pso = PsoConfig(n_particles=args.particles, n_iterations=args.pso_iters,
                    lambda_hd=args.lambda_hd, seed=args.seed)
    ref = RefineConfig(n_iterations=args.refine_iters, lr0=args.lr,
                       lambda_curv11=args.lambda_curv11, lambda_curv12=args.lambda_curv12,
                       lambda_proximity=args.lambda_prox, lambda_coverage=args.lambda_coverage,
                       curvature_reduction=args.curvature_reduction)
    return pso, ref


def _write_outputs(out_dir: Path, surfaces, report, resolution) -> None:
    from .pipeline import export_obj, write_report, write_timings

    out_dir.mkdir(parents=True, exist_ok=True)
    for surface, leaf in zip(surfaces, report.leaves):
        if surface is not None:
            export_obj(surface, out_dir / f"{leaf.leaf_id}.obj", resolution)
    write_report(report, out_dir / "report.json")
    write_timings(report, out_dir / "timings.json")


def _summarize(report) -> int:
    for leaf in report.leaves:
        if leaf.status == "ok":
            print(f"{leaf.leaf_id}: {leaf.distance_after_pso_mm:.3f} mm -> "
                  f"{leaf.distance_after_refine_mm:.3f} mm")
        else:
            print(f"{leaf.leaf_id}: FAILED ({leaf.error})")
    return EXIT_PARTIAL if report.n_failed else EXIT_OK


def cmd_fit(args) -> int:
    from .pipeline import fit_plant, load_plant

    dataset = load_plant(args.plant_dir)
    pso, ref = _configs(args)
    surfaces, report = fit_plant(dataset, pso, ref, args.parallelism, seed=args.seed)
    _write_outputs(Path(args.out_dir), surfaces, report, tuple(args.resolution))
    return _summarize(report)


def cmd_fit_leaf(args) -> int:
    from .pipeline import PlantDataset, fit_plant, load_point_cloud

    cloud = load_point_cloud(args.cloud, args.format)
    leaf_id = Path(args.cloud).stem
    dataset = PlantDataset(leaf_id, [(leaf_id, cloud)],
                           stalk_xy=tuple(args.stalk_xy) if args.stalk_xy else None)
    pso, ref = _configs(args)
    surfaces, report = fit_plant(dataset, pso, ref, 1, seed=args.seed)
    _write_outputs(Path(args.out_dir), surfaces, report, tuple(args.resolution))
    return _summarize(report)


def cmd_synth(args) -> int:
    from .synth import plant_specs, write_plant

    specs = plant_specs(args.leaves, args.seed, n_points=args.points, noise_sigma=args.noise,
                        occlusion_max=args.occlusion)
    paths = write_plant(args.out_dir, specs, args.format)
    print(f"wrote {len(paths)} leaves to {args.out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .synth import run_benchmark

    pso, ref = _configs(args)
    result = run_benchmark(args.plants, args.leaves, pso, ref, seed=args.seed,
                           out_dir=args.out_dir, parallelism=args.parallelism,
                           n_points=args.points, noise_sigma=args.noise,
                           occlusion_max=args.occlusion)
    print(f"{'plant':<10} {'leaf':<8} {'after PSO':>10} {'after refine':>13}")
    failed = 0
    for row in result.rows:
        if row["status"] != "ok":
            failed += 1
            print(f"{row['plant_id']:<10} {row['leaf_id']:<8} {'failed':>10}")
            continue
        print(f"{row['plant_id']:<10} {row['leaf_id']:<8} {row['after_pso_mm']:>10.3f} "
              f"{row['after_refine_mm']:>13.3f}")
    print(f"PSO {result.pso_seconds:.1f} s, refine {result.refine_seconds:.1f} s")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import load_point_cloud, read_obj

    verts, _ = read_obj(args.mesh)
    cloud = load_point_cloud(args.cloud, args.format)
    out = {
        "report_distance_mm": report_distance_mm(verts, cloud),
        "chamfer": chamfer_distance(verts, cloud),
        "hausdorff": hausdorff_distance(verts, cloud),
        "n_vertices": len(verts),
        "n_points": len(cloud),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splinefit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit every leaf_*.xyz/ply in a plant directory")
    p.add_argument("plant_dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resolution", type=int, nargs=2, default=(32, 8), metavar=("N_U", "N_V"))
    _add_fit_flags(p, FULL)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-leaf", help="fit a single leaf cloud")
    p.add_argument("cloud")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("xyz", "ply"), default=None)
    p.add_argument("--stalk-xy", type=float, nargs=2, default=None, metavar=("X", "Y"))
    p.add_argument("--resolution", type=int, nargs=2, default=(32, 8), metavar=("N_U", "N_V"))
    _add_fit_flags(p, FULL)
    p.set_defaults(func=cmd_fit_leaf)

    p = sub.add_parser("synth", help="write a synthetic plant with ground truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--leaves", type=int, default=10)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.005, help="sigma as a fraction of leaf length")
    p.add_argument("--occlusion", type=float, default=0.1, help="largest occluded fraction")
    p.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="fit synthetic plants and tabulate distances and timings")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--plants", type=int, default=1)
    p.add_argument("--leaves", type=int, default=10)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--occlusion", type=float, default=0.1)
    _add_fit_flags(p, DESK)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="distances between an OBJ mesh and a cloud")
    p.add_argument("mesh")
    p.add_argument("cloud")
    p.add_argument("--format", choices=("xyz", "ply"), default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    env_seed = os.environ.get("SPLINEFIT_SEED")
    if env_seed is not None and hasattr(args, "seed"):
        try:
            args.seed = int(env_seed)
        except ValueError:
            print(f"error: SPLINEFIT_SEED must be an integer, got {env_seed!r}", file=sys.stderr)
            return EXIT_FATAL
    try:
        return args.func(args)
    except (SplinefitError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
