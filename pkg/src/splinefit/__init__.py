"""Fit NURBS leaf surfaces to 3D point clouds: particle-swarm search over a
bounded leaf genome, then gradient refinement of the control points."""

from .errors import (
    CloudParseError, ConfigurationError, DegenerateInputError, DomainError,
    EmptyDatasetError, InvalidGenomeError, InvalidInputError, SplinefitError,
)
from .leaf import (
    LeafGenome, NormalizationRecord, decode_genome, denormalize_surface,
    genome_bounds, normalize_cloud,
)
from .metrics import (
    NearestNeighborIndex, build_index, chamfer_distance, hausdorff_distance,
    one_sided_chamfer, pso_fitness, report_distance_mm,
)
from .nurbs import NurbsSurface, evaluate_grid, evaluate_surface, make_surface
from .pipeline import (
    FitReport, PlantDataset, export_obj, fit_leaf, fit_plant, load_plant,
    load_point_cloud, read_report, save_point_cloud, write_report,
)
from .pso import PsoConfig, extract_phyllotaxy, fit_initial_surface
from .refine import LossBreakdown, RefineConfig, loss_gradient, refine, total_loss

__version__ = "0.1.0"
