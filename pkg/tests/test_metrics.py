import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from splinefit.errors import InvalidInputError
from splinefit.metrics import (
    NearestNeighborIndex, build_index, chamfer_distance, directed_hausdorff,
    hausdorff_distance, one_sided_chamfer, pso_fitness, report_distance_mm, subsample,
)
from splinefit.synth import brute_force_nearest

coords = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
clouds = st.integers(1, 40).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coords))
# small integer grids produce many exact ties
tie_clouds = st.integers(1, 40).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.integers(-2, 2).map(float)))


def oracle_sq(x, y):
    """Double loop: per point of x, the squared distance to its nearest y."""
    out = []
    for p in x:
        out.append(min(float(((p - q) ** 2).sum()) for q in y))
    return np.array(out)


def test_chamfer_singletons():
    assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    assert one_sided_chamfer([[0, 0, 0]], [[3, 4, 0]]) == 25.0


def test_hausdorff_singletons():
    assert hausdorff_distance([[0, 0, 0]], [[3, 4, 0]]) == 5.0
    x = np.array([[0.0, 0, 0], [10, 0, 0]])
    y = np.array([[0.0, 0, 0]])
    assert directed_hausdorff(x, y) == 10.0
    assert directed_hausdorff(y, x) == 0.0
    assert hausdorff_distance(x, y) == 10.0


def test_pso_fitness_arithmetic():
    # CD = 2 and HD = 5 on separate pairs, combined by construction
    x = np.array([[0.0, 0, 0]])
    y = np.array([[1.0, 0, 0]])
    assert pso_fitness(x, y, 0.1) == pytest.approx(2.0 + 0.1 * 1.0)
    a = np.array([[0.0, 0, 0]])
    b = np.array([[3.0, 4, 0]])
    assert pso_fitness(a, b, 0.1) == pytest.approx(50.0 + 0.5)
    assert pso_fitness(a, a) == 0.0
    with pytest.raises(ValueError):
        pso_fitness(a, b, -1.0)


def test_report_distance_convention():
    assert report_distance_mm([[0, 0, 0]], [[0.06, 0, 0]]) == pytest.approx(0.06)
    pts = np.random.default_rng(0).random((50, 3))
    assert report_distance_mm(pts, pts) == 0.0
    # mean of the two directions, unsquared
    s = np.array([[0.0, 0, 0], [1, 0, 0]])
    d = np.array([[0.0, 0, 0]])
    assert report_distance_mm(s, d) == pytest.approx(0.5 * (0.0 + 0.5))


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        chamfer_distance(np.empty((0, 3)), [[0, 0, 0]])
    with pytest.raises(InvalidInputError):
        hausdorff_distance([[0, 0, np.nan]], [[0, 0, 0]])
    with pytest.raises(InvalidInputError):
        NearestNeighborIndex(np.zeros((4, 2)))


@given(clouds, clouds)
def test_index_matches_brute_force(x, y):
    idx, sq = NearestNeighborIndex(y).query(x)
    b_idx, b_sq = brute_force_nearest(x, y)
    np.testing.assert_array_equal(idx, b_idx)
    np.testing.assert_array_equal(sq, b_sq)


@given(tie_clouds, tie_clouds)
def test_index_tie_break_lowest_index(x, y):
    idx, _ = NearestNeighborIndex(y).query(x)
    b_idx, _ = brute_force_nearest(x, y)
    np.testing.assert_array_equal(idx, b_idx)


def test_many_equidistant_candidates():
    # more tied points than the k-d tree candidate list
    ring = np.array([[np.cos(t), np.sin(t), 0.0] for t in np.linspace(0, 2 * np.pi, 13)[:-1]])
    ring = np.round(ring, 12)
    y = np.vstack([[[5.0, 5, 5]], ring[::-1]])
    idx, _ = NearestNeighborIndex(y).query([[0.0, 0.0, 0.0]])
    b_idx, _ = brute_force_nearest([[0.0, 0.0, 0.0]], y)
    assert idx[0] == b_idx[0]


def test_duplicates_return_lowest_index():
    y = np.array([[1.0, 0, 0], [0.0, 0, 0], [0.0, 0, 0], [0.0, 0, 0]])
    idx, sq = build_index(y).query([[0.0, 0.0, 0.0]])
    assert idx[0] == 1 and sq[0] == 0.0


@given(clouds, clouds)
def test_metrics_match_double_loop(x, y):
    d_xy, d_yx = oracle_sq(x, y), oracle_sq(y, x)
    assert one_sided_chamfer(x, y) == pytest.approx(d_xy.sum(), rel=1e-10, abs=1e-12)
    assert chamfer_distance(x, y) == pytest.approx(d_xy.sum() + d_yx.sum(), rel=1e-10, abs=1e-12)
    want_hd = np.sqrt(max(d_xy.max(), d_yx.max()))
    assert hausdorff_distance(x, y) == pytest.approx(want_hd, rel=1e-10, abs=1e-12)


@given(clouds, clouds)
def test_symmetry(x, y):
    assert chamfer_distance(x, y) == pytest.approx(chamfer_distance(y, x), rel=1e-12, abs=1e-12)
    assert hausdorff_distance(x, y) == hausdorff_distance(y, x)


@given(clouds, clouds, clouds)
def test_superset_targets_never_increase_one_sided(x, y, extra):
    assert one_sided_chamfer(x, np.vstack([y, extra])) <= one_sided_chamfer(x, y) + 1e-12


@given(clouds, clouds)
def test_hausdorff_dominates_pointwise_terms(x, y):
    hd = hausdorff_distance(x, y)
    assert hd ** 2 >= oracle_sq(x, y).max() - 1e-9
    assert hd ** 2 >= oracle_sq(y, x).max() - 1e-9


@given(clouds, clouds)
def test_one_sided_is_half_of_chamfer(x, y):
    total = chamfer_distance(x, y)
    parts = one_sided_chamfer(x, y) + one_sided_chamfer(y, x)
    assert total == pytest.approx(parts, rel=1e-12, abs=1e-12)


@given(clouds, clouds, st.floats(0, 10))
def test_pso_fitness_is_sum_of_components(x, y, lam):
    want = chamfer_distance(x, y) + lam * hausdorff_distance(x, y)
    assert pso_fitness(x, y, lam) == pytest.approx(want, rel=1e-10, abs=1e-10)
    assert pso_fitness(x, y, lam, y_index=build_index(y)) == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_identity_iff_coincident():
    rng = np.random.default_rng(1)
    x = rng.random((30, 3))
    y = np.vstack([x, x[:5]])  # every point of each set lies in the other
    assert chamfer_distance(x, y) == 0.0
    assert hausdorff_distance(x, y) == 0.0
    y2 = y.copy()
    y2[0, 0] += 1e-6
    assert chamfer_distance(x, y2) > 0.0


def test_subsample_seeded_and_ordered():
    pts = np.arange(300, dtype=float).reshape(100, 3)
    a = subsample(pts, 10, seed=3)
    b = subsample(pts, 10, seed=3)
    np.testing.assert_array_equal(a, b)
    assert len(a) == 10 and np.all(np.diff(a[:, 0]) > 0)
    assert subsample(pts, 1000, seed=0) is pts
