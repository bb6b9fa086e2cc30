import itertools
import math

import numpy as np
import pytest

from netform.exceptions import InvalidArgumentError
from netform.reference import (
    CellKind,
    map_geometry,
    quadrature_for,
    reference_vertices,
    shape_gradients,
    shape_values,
)


def _monomial_exact(kind, powers):
    if kind is CellKind.TRIANGLE:
        a, b = powers
        return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
    return float(np.prod([1.0 / (p + 1) for p in powers]))


@pytest.mark.parametrize("kind", list(CellKind))
@pytest.mark.parametrize("degree", range(0, 6))
def test_quadrature_exact_on_monomials(kind, degree):
    rule = quadrature_for(kind, degree)
    assert rule.weights.sum() == pytest.approx(kind.reference_measure, abs=1e-14)
    assert np.all(rule.weights > 0)
    for powers in itertools.product(range(degree + 1), repeat=kind.dim):
        if sum(powers) > degree:
            continue
        vals = np.prod(rule.points ** np.array(powers), axis=1)
        assert vals @ rule.weights == pytest.approx(_monomial_exact(kind, powers), rel=1e-13)


def test_quad_midpoint_rule():
    rule = quadrature_for(CellKind.QUAD, 1)
    assert rule.points.shape == (1, 2)
    np.testing.assert_allclose(rule.points[0], [0.5, 0.5])
    assert rule.weights[0] == 1.0


def test_quad_degree3_integrates_x3y3():
    rule = quadrature_for(CellKind.QUAD, 3)
    assert len(rule.weights) == 4
    x, y = rule.points.T
    assert (x ** 3 * y ** 3) @ rule.weights == pytest.approx(1.0 / 16.0, rel=1e-14)


def test_triangle_three_point_rule():
    rule = quadrature_for(CellKind.TRIANGLE, 2)
    assert len(rule.weights) == 3
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("kind", list(CellKind))
def test_unsupported_degree(kind):
    with pytest.raises(InvalidArgumentError):
        quadrature_for(kind, -1)
    with pytest.raises(InvalidArgumentError):
        quadrature_for(kind, 10)


@pytest.mark.parametrize("kind", list(CellKind))
def test_shape_functions_nodal_and_partition_of_unity(kind):
    nodes = reference_vertices(kind)
    np.testing.assert_allclose(shape_values(kind, nodes), np.eye(len(nodes)), atol=1e-15)
    pts = quadrature_for(kind, 4).points
    np.testing.assert_allclose(shape_values(kind, pts).sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(shape_gradients(kind, pts).sum(axis=1), 0.0, atol=1e-14)


@pytest.mark.parametrize("kind", list(CellKind))
def test_shape_gradients_match_finite_differences(kind):
    pts = quadrature_for(kind, 2).points
    h = 1e-6
    grads = shape_gradients(kind, pts)
    for i in range(kind.dim):
        e = np.zeros(kind.dim)
        e[i] = h
        fd = (shape_values(kind, pts + e) - shape_values(kind, pts - e)) / (2 * h)
        np.testing.assert_allclose(grads[..., i], fd, atol=1e-9)


def test_map_geometry_scaled_square():
    coords = np.array([[[0, 0], [2, 0], [2, 3], [0, 3]]], dtype=float)
    pts = quadrature_for(CellKind.QUAD, 2).points
    det, grads = map_geometry(coords, shape_gradients(CellKind.QUAD, pts))
    np.testing.assert_allclose(det, 6.0)
    # gradient of x interpolant is (1, 0)
    np.testing.assert_allclose(np.einsum("cqad,a->cqd", grads, coords[0, :, 0]), [[[1, 0]] * 4],
                               atol=1e-14)


def test_cell_kind_parse():
    assert CellKind.parse("Quadrilateral") is CellKind.QUAD
    assert CellKind.parse(" tri ") is CellKind.TRIANGLE
    with pytest.raises(InvalidArgumentError):
        CellKind.parse("prism")
