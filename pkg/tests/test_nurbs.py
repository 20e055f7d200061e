import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from splinefit.errors import ConfigurationError, DomainError
from splinefit.nurbs import (
    GridBasis, NurbsSurface, basis_functions, basis_matrix, clamped_uniform_knots,
    closest_points, control_point_jacobian, corner_points, evaluate_grid, evaluate_points,
    evaluate_surface, lattice_params, make_surface, rational_basis, second_derivatives,
)

from conftest import random_surface

unit = st.floats(0.0, 1.0, allow_nan=False)


def cox_de_boor(i, p, knots, u):
    """Textbook scalar recursion with 0/0 = 0 and the last span closed."""
    if p == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        last = max(j for j in range(len(knots) - 1) if knots[j] < knots[j + 1])
        return 1.0 if (u == knots[-1] and i == last) else 0.0
    left = right = 0.0
    if knots[i + p] > knots[i]:
        left = (u - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(i, p - 1, knots, u)
    if knots[i + p + 1] > knots[i + 1]:
        right = ((knots[i + p + 1] - u) / (knots[i + p + 1] - knots[i + 1])
                 * cox_de_boor(i + 1, p - 1, knots, u))
    return left + right


def bernstein(n, i, t):
    return math.comb(n, i) * t ** i * (1 - t) ** (n - i)


def test_clamped_knots_layout():
    k = clamped_uniform_knots(6, 3)
    assert k.tolist() == [0, 0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1, 1]
    assert clamped_uniform_knots(3, 2).tolist() == [0, 0, 0, 1, 1, 1]
    with pytest.raises(ConfigurationError):
        clamped_uniform_knots(3, 3)


@pytest.mark.parametrize("n_ctrl,degree", [(6, 3), (3, 2), (7, 2), (5, 4)])
def test_basis_matches_scalar_recursion(n_ctrl, degree):
    knots = clamped_uniform_knots(n_ctrl, degree)
    us = np.concatenate([np.linspace(0, 1, 41), knots])
    got = basis_matrix(knots, degree, us)[0]
    want = np.array([[cox_de_boor(i, degree, knots, u) for i in range(n_ctrl)] for u in us])
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_single_span_is_bernstein():
    # degree p with p+1 control points has no interior knots
    for p in (1, 2, 3, 4):
        knots = clamped_uniform_knots(p + 1, p)
        for t in (0.0, 0.2, 0.5, 0.9, 1.0):
            want = [bernstein(p, i, t) for i in range(p + 1)]
            np.testing.assert_allclose(basis_functions(knots, p, t), want, atol=1e-15)


def test_cubic_midpoint_values():
    knots = clamped_uniform_knots(4, 3)
    np.testing.assert_allclose(basis_functions(knots, 3, 0.5), [0.125, 0.375, 0.375, 0.125])


@given(st.lists(unit, min_size=1, max_size=30))
def test_partition_of_unity(us):
    b = basis_matrix(clamped_uniform_knots(6, 3), 3, us)[0]
    assert np.all(b >= 0)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-13)


def test_basis_derivatives_match_finite_differences():
    knots = clamped_uniform_knots(6, 3)
    u = np.linspace(0.05, 0.95, 19)
    h = 1e-5
    b = basis_matrix(knots, 3, u, order=2)
    b_p = basis_matrix(knots, 3, u + h)[0]
    b_m = basis_matrix(knots, 3, u - h)[0]
    np.testing.assert_allclose(b[1], (b_p - b_m) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(b[2], (b_p - 2 * b[0] + b_m) / h ** 2, atol=2e-3)


def test_parameter_outside_domain_rejected():
    surf = random_surface(np.random.default_rng(0))
    with pytest.raises(DomainError):
        evaluate_surface(surf, 1.0 + 1e-9, 0.5)
    with pytest.raises(DomainError):
        evaluate_points(surf, [0.5], [np.nan])


def test_surface_validation():
    pts = np.zeros((3, 6, 3))
    with pytest.raises(ConfigurationError):
        make_surface(pts, degree_u=6)
    with pytest.raises(ConfigurationError):
        make_surface(pts, weights=np.zeros((3, 6)))
    with pytest.raises(ConfigurationError):
        make_surface(np.zeros((3, 6, 2)))
    surf = make_surface(pts)
    with pytest.raises(ConfigurationError):
        NurbsSurface(pts, surf.weights, [0, 0, 0, 0.5, 0.2, 0.7, 1, 1, 1, 1], surf.knots_v, 3, 2)
    with pytest.raises(ValueError):
        surf.points[0, 0, 0] = 1.0  # read-only


def test_corners_interpolate_control_points():
    rng = np.random.default_rng(1)
    surf = random_surface(rng, weights=True)
    got = evaluate_points(surf, [0, 1, 0, 1], [0, 0, 1, 1])
    np.testing.assert_array_equal(got, np.array(corner_points(surf)))


def test_tensor_product_oracle():
    rng = np.random.default_rng(2)
    surf = random_surface(rng)
    for u, v in rng.random((20, 2)):
        nu = [cox_de_boor(i, 3, surf.knots_u, u) for i in range(6)]
        nv = [cox_de_boor(j, 2, surf.knots_v, v) for j in range(3)]
        want = sum(nv[r] * nu[c] * surf.points[r, c] for r in range(3) for c in range(6))
        np.testing.assert_allclose(evaluate_surface(surf, u, v), want, atol=1e-12)


def test_rational_oracle_homogeneous():
    # rational surface equals the projection of a 4D polynomial surface
    rng = np.random.default_rng(3)
    surf = random_surface(rng, weights=True)
    homog = np.concatenate([surf.points * surf.weights[..., None], surf.weights[..., None]], -1)
    poly = make_surface(np.zeros((3, 6, 3)))
    u, v = rng.random((2, 50))
    rows = rational_basis(poly, u, v)["value"]
    h = rows @ homog.reshape(-1, 4)
    np.testing.assert_allclose(evaluate_points(surf, u, v), h[:, :3] / h[:, 3:], atol=1e-12)


@given(st.floats(0.01, 100.0))
def test_uniform_weights_degenerate_to_bspline(c):
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(3, 6, 3))
    u, v = rng.random((2, 200))
    plain = evaluate_points(make_surface(pts), u, v)
    scaled = evaluate_points(make_surface(pts, weights=np.full((3, 6), c)), u, v)
    assert np.abs(plain - scaled).max() <= 1e-12


def test_jacobian_is_linear_map_and_sums_to_one():
    rng = np.random.default_rng(5)
    surf = random_surface(rng, weights=True)
    for u, v in rng.random((10, 2)):
        jac = control_point_jacobian(surf, u, v)
        assert jac.shape == (3, 6)
        assert abs(jac.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(np.einsum("rc,rcd->d", jac, surf.points),
                                   evaluate_surface(surf, u, v), atol=1e-12)
        # finite difference in one control point
        bumped = np.array(surf.points)
        bumped[1, 2, 0] += 1e-3
        delta = evaluate_surface(surf.with_points(bumped), u, v) - evaluate_surface(surf, u, v)
        assert delta[0] == pytest.approx(jac[1, 2] * 1e-3, abs=1e-12)


def test_second_derivatives_match_finite_differences():
    rng = np.random.default_rng(6)
    surf = random_surface(rng, weights=True)
    h = 1e-4
    S = lambda u, v: evaluate_surface(surf, u, v)  # noqa: E731
    for u, v in rng.uniform(0.1, 0.9, (10, 2)):
        s_uu, s_uv = second_derivatives(surf, u, v)
        fd_uu = (S(u + h, v) - 2 * S(u, v) + S(u - h, v)) / h ** 2
        fd_uv = (S(u + h, v + h) - S(u + h, v - h) - S(u - h, v + h) + S(u - h, v - h)) / (4 * h * h)
        np.testing.assert_allclose(s_uu, fd_uu, rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(s_uv, fd_uv, rtol=1e-4, atol=1e-4)


def test_first_derivative_rows():
    rng = np.random.default_rng(7)
    surf = random_surface(rng, weights=True)
    u, v = rng.uniform(0.1, 0.9, (2, 10))
    h = 1e-6
    rows = rational_basis(surf, u, v, order=1)
    flat = surf.points.reshape(-1, 3)
    fd_u = (evaluate_points(surf, u + h, v) - evaluate_points(surf, u - h, v)) / (2 * h)
    fd_v = (evaluate_points(surf, u, v + h) - evaluate_points(surf, u, v - h)) / (2 * h)
    np.testing.assert_allclose(rows["u"] @ flat, fd_u, atol=1e-6)
    np.testing.assert_allclose(rows["v"] @ flat, fd_v, atol=1e-6)


def test_lattice_layout_is_v_major():
    p = lattice_params(4, 3)
    assert p.shape == (3, 4, 2)
    assert p[0, :, 0].tolist() == pytest.approx([0, 1 / 3, 2 / 3, 1])
    assert p[:, 0, 1].tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(ConfigurationError):
        lattice_params(1, 3)


def test_grid_basis_matches_direct_evaluation():
    rng = np.random.default_rng(8)
    surf = random_surface(rng, weights=True)
    basis = GridBasis.for_surface(surf, 32, 8)
    grid = evaluate_grid(surf, 32, 8)
    np.testing.assert_allclose(basis.samples(surf.points), grid.flat_positions(), atol=1e-12)
    # batched control grids
    batch = np.stack([surf.points, 2 * surf.points])
    out = basis.samples(batch)
    assert out.shape == (2, 256, 3)
    np.testing.assert_allclose(out[1], 2 * out[0], atol=1e-12)
    # second-derivative rows agree with the pointwise helper in the interior
    k = 8 * 32 // 2 + 5
    u, v = basis.params.reshape(-1, 2)[k]
    s_uu, s_uv = second_derivatives(surf, u, v)
    np.testing.assert_allclose(basis.d_uu[k] @ surf.points.reshape(-1, 3), s_uu, atol=1e-10)
    np.testing.assert_allclose(basis.d_uv[k] @ surf.points.reshape(-1, 3), s_uv, atol=1e-10)


def test_closest_points_against_dense_search():
    rng = np.random.default_rng(9)
    pts = np.zeros((3, 6, 3))
    pts[..., 0] = np.linspace(0, 2, 6)[None, :]
    pts[..., 1] = np.linspace(-0.3, 0.3, 3)[:, None]
    pts[..., 2] = 0.2 * rng.normal(size=(3, 6))
    surf = make_surface(pts)
    on = rng.random((30, 2))
    base = evaluate_points(surf, on[:, 0], on[:, 1])
    queries = base + rng.normal(scale=0.02, size=base.shape)
    uv, foot = closest_points(surf, queries)
    dense = evaluate_grid(surf, 1000, 250).flat_positions()
    d_dense = np.sqrt(((queries[:, None] - dense[None]) ** 2).sum(-1)).min(1)
    d_foot = np.linalg.norm(queries - foot, axis=1)
    # never worse than the lattice, and within its resolution
    assert np.all(d_foot <= d_dense + 1e-9)
    assert np.all(d_foot >= d_dense - 2e-3)
    # interior foot points are stationary: the residual is normal to the surface
    rows = rational_basis(surf, uv[:, 0], uv[:, 1], order=1)
    flat = surf.points.reshape(-1, 3)
    r = foot - queries
    inside = np.all((uv > 1e-9) & (uv < 1 - 1e-9), axis=1)
    for key in ("u", "v"):
        t = rows[key] @ flat
        cos = np.abs((r * t).sum(1)) / (np.linalg.norm(t, axis=1) * np.maximum(d_foot, 1e-300))
        assert np.all(cos[inside] < 1e-6)


def test_closest_points_on_degenerate_strip():
    # zero-width surface: the 2x2 Gauss-Newton system is singular
    pts = np.zeros((3, 6, 3))
    pts[..., 0] = np.array([0, 1 / 9, 1 / 3, 2 / 3, 8 / 9, 1])[None, :]
    surf = make_surface(pts)
    q = evaluate_points(surf, np.linspace(0, 1, 31), np.full(31, 0.3))
    _, foot = closest_points(surf, q)
    np.testing.assert_allclose(foot, q, atol=1e-12)
