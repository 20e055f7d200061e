import numpy as np
import pytest
from hypothesis import settings

from splinefit.leaf import leaf_surface
from splinefit.synth import SynthSpec, generate_leaf, sample_leaf_genome

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# (criterion, passed, detail) rows filled in by the acceptance suite
ACCEPTANCE_LINES = []


def random_surface(rng, weights=False, scale=1.0):
    """A leaf-structured surface with random control points (and weights)."""
    pts = rng.normal(size=(3, 6, 3)) * scale
    surf = leaf_surface(pts)
    if weights:
        surf = type(surf)(pts, rng.uniform(0.5, 2.0, (3, 6)), surf.knots_u, surf.knots_v,
                          surf.degree_u, surf.degree_v)
    return surf


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_leaf():
    """A noise-free synthetic leaf cloud (mm) and its ground-truth surface."""
    spec = SynthSpec(genome=tuple(sample_leaf_genome(7)), n_points=800, seed=7, rotation=0.6)
    return generate_leaf(spec)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: int(r[0])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {name}: {detail}")
