import math
import random

import numpy as np
import pytest

from trajlab import geometry
from trajlab.expressions import parse
from trajlab.geometry import (
    DegenerateMetricError,
    GeometryError,
    ManifoldChart,
    SignatureError,
    euclidean_chart,
    hyperbolic_distance,
    hyperbolic_half_plane_chart,
    polar_chart,
    symbolic_inverse,
)

CHARTS = {
    "euclidean2": euclidean_chart(2),
    "polar": polar_chart(),
    "hyperbolic": hyperbolic_half_plane_chart(),
}


def _random_point(chart, rng):
    return np.array([rng.uniform(lo, hi) for lo, hi in chart.sample_box])


def test_euclidean_metric_is_identity():
    chart = euclidean_chart(2)
    assert np.array_equal(chart.metric_at([0.3, -1.2]), np.eye(2))


def test_polar_metric_at_r2():
    g = polar_chart().metric_at([2.0, 0.7])
    assert np.allclose(g, np.diag([1.0, 4.0]))


def test_ppwave_metric_rows():
    # wave profile x^2 + 1 evaluates to 5 at the chosen point
    chart_h5 = ManifoldChart(
        ("x", "y", "u", "v"),
        [
            ["1", "0", "0", "0"],
            ["0", "1", "0", "0"],
            ["0", "0", "x^2 + 1", "1"],
            ["0", "0", "1", "0"],
        ],
        signature=geometry.PSEUDO_RIEMANNIAN,
    )
    g = chart_h5.metric_at([2.0, 0.0, 0.0, 0.0])
    expected = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 5.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    assert np.allclose(g, expected)


def test_degenerate_metric_rejected():
    with pytest.raises(DegenerateMetricError) as err:
        polar_chart().metric_at([0.0, 0.0])
    assert abs(err.value.det) <= 1e-12


def test_metric_must_be_symbolically_symmetric():
    with pytest.raises(GeometryError):
        ManifoldChart(("x", "y"), [["1", "x"], ["y", "1"]])


def test_non_positive_definite_riemannian_rejected():
    with pytest.raises(GeometryError):
        ManifoldChart(("x", "y"), [["1", "0"], ["0", "-1"]])


def test_euclidean_christoffel_vanishes():
    chart = euclidean_chart(3)
    assert np.array_equal(chart.christoffel([0.1, 2.0, -3.0]), np.zeros((3, 3, 3)))


def test_polar_christoffel_analytic():
    chart = polar_chart()
    for r in (0.7, 2.0, 5.5):
        gamma = chart.christoffel([r, 1.0])
        expected = np.zeros((2, 2, 2))
        expected[0, 1, 1] = -r
        expected[1, 0, 1] = expected[1, 1, 0] = 1.0 / r
        assert np.allclose(gamma, expected, atol=1e-12)


def test_hyperbolic_christoffel_analytic():
    chart = hyperbolic_half_plane_chart()
    gamma = chart.christoffel([0.0, 2.0])
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 1] = expected[0, 1, 0] = -0.5  # x, xy
    expected[1, 0, 0] = 0.5  # y, xx
    expected[1, 1, 1] = -0.5  # y, yy
    assert np.allclose(gamma, expected, atol=1e-12)


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_christoffel_symmetric_in_lower_indices(name):
    chart = CHARTS[name]
    rng = random.Random(hash(name) & 0xFFFF)
    for _ in range(1000):
        p = _random_point(chart, rng)
        gamma = chart.christoffel(p)
        assert np.allclose(gamma, np.swapaxes(gamma, 1, 2), atol=1e-12)


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_symbolic_metric_derivatives_match_finite_differences(name):
    chart = CHARTS[name]
    rng = random.Random(1234)
    for _ in range(25):
        p = _random_point(chart, rng)
        sym = chart.metric_derivatives_at(p)
        for k in range(chart.dim):
            h = 1e-6 * max(1.0, abs(p[k]))
            pp, pm = p.copy(), p.copy()
            pp[k] += h
            pm[k] -= h
            fd = (chart.metric_at(pp) - chart.metric_at(pm)) / (2.0 * h)
            assert np.allclose(sym[k], fd, rtol=1e-6, atol=1e-8)


def test_chart_distance_euclidean():
    chart = euclidean_chart(2)
    d, exact = chart.chart_distance([0.0, 0.0], [3.0, 4.0])
    assert d == pytest.approx(5.0) and exact


def test_chart_distance_line():
    chart = euclidean_chart(1, ("x",))
    d, exact = chart.chart_distance([1.0], [-1.0])
    assert d == pytest.approx(2.0) and exact


def test_chart_distance_hyperbolic_upper_bound():
    chart = hyperbolic_half_plane_chart()
    d, exact = chart.chart_distance([0.0, 1.0], [0.0, 2.0])
    assert not exact
    # the vertical segment is the geodesic: length equals the true distance
    assert d == pytest.approx(math.log(2.0), rel=1e-10)
    assert d >= hyperbolic_distance((0.0, 1.0), (0.0, 2.0)) - 1e-12

    rng = random.Random(5)
    for _ in range(30):
        p = (rng.uniform(-2, 2), rng.uniform(0.3, 3.0))
        q = (rng.uniform(-2, 2), rng.uniform(0.3, 3.0))
        chord, _ = chart.chart_distance(p, q)
        assert chord >= hyperbolic_distance(p, q) - 1e-9


def test_distance_mode_flags():
    assert euclidean_chart(2).distance_mode == "exact-flat"
    assert polar_chart().distance_mode == "chord-upper-bound"
    assert hyperbolic_half_plane_chart().distance_mode == "chord-upper-bound"


def test_chart_distance_rejects_pseudo_riemannian():
    chart = ManifoldChart(
        ("u", "v"),
        [["0", "1"], ["1", "0"]],
        signature=geometry.PSEUDO_RIEMANNIAN,
    )
    with pytest.raises(SignatureError):
        chart.chart_distance([0.0, 0.0], [1.0, 1.0])


def test_symbolic_inverse_matches_numeric():
    entries = [
        [parse("1 + x^2"), parse("x*y")],
        [parse("x*y"), parse("2 + y^2")],
    ]
    inv = symbolic_inverse(entries)
    rng = random.Random(11)
    for _ in range(20):
        b = {"x": rng.uniform(-2, 2), "y": rng.uniform(-2, 2)}
        m = np.array([[e.evaluate(b) for e in row] for row in entries])
        m_inv = np.array([[e.evaluate(b) for e in row] for row in inv])
        assert np.allclose(m @ m_inv, np.eye(2), atol=1e-12)


def test_speed_squared_uses_metric():
    chart = polar_chart()
    assert chart.speed_squared([2.0, 0.0], [0.0, 1.0]) == pytest.approx(4.0)
