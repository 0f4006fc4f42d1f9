import random

import numpy as np
import pytest

from trajlab.forces import ForceSystem, ForceSystemError
from trajlab.geometry import euclidean_chart, polar_chart


def test_skew_matrix_decomposes_to_pure_h():
    chart = euclidean_chart(2)
    sys = ForceSystem(chart.coord_names, force_matrix=[["0", "1"], ["-1", "0"]])
    s, h = sys.decompose(chart, [0.0, 0.0], 0.0)
    assert np.allclose(s, 0.0, atol=1e-15)
    assert np.allclose(h, [[0.0, 1.0], [-1.0, 0.0]])


def test_euclidean_decomposition_arithmetic():
    chart = euclidean_chart(2)
    sys = ForceSystem(chart.coord_names, force_matrix=[["1", "2"], ["0", "1"]])
    s, h = sys.decompose(chart, [0.0, 0.0], 0.0)
    assert np.allclose(s, [[1.0, 1.0], [1.0, 1.0]])
    assert np.allclose(h, [[0.0, 1.0], [-1.0, 0.0]])


def test_polar_decomposition_is_metric_adjoint():
    chart = polar_chart()
    sys = ForceSystem(chart.coord_names, force_matrix=[["0", "1"], ["0", "0"]])
    p = [2.0, 0.3]
    f = sys.force_matrix_at(p, 0.0)
    g = chart.metric_at(p)
    s, h = sys.decompose(chart, p, 0.0)
    assert np.allclose(s, 0.5 * (f + np.linalg.inv(g) @ f.T @ g))
    assert np.allclose(s + h, f, atol=1e-14)
    assert np.allclose(g @ s, (g @ s).T, atol=1e-13)
    assert np.allclose(g @ h, -(g @ h).T, atol=1e-13)


def test_decompose_sums_to_f_exactly():
    rng = random.Random(3)
    chart = polar_chart()
    sys = ForceSystem(
        chart.coord_names,
        force_matrix=[["r", "sin(theta)"], ["theta*r", "1"]],
    )
    for _ in range(50):
        p = [rng.uniform(0.5, 3.0), rng.uniform(-3, 3)]
        f = sys.force_matrix_at(p, 0.0)
        s, h = sys.decompose(chart, p, 0.0)
        assert np.max(np.abs(s + h - f)) <= 1e-14


def test_quadratic_form_sees_only_self_adjoint_part():
    rng = random.Random(17)
    chart = polar_chart()
    sys = ForceSystem(
        chart.coord_names, force_matrix=[["r", "1"], ["sin(theta)", "2"]]
    )
    for _ in range(50):
        p = [rng.uniform(0.5, 3.0), rng.uniform(-3, 3)]
        v = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2)])
        g = chart.metric_at(p)
        s, _ = sys.decompose(chart, p, 0.0)
        f = sys.force_matrix_at(p, 0.0)
        assert v @ g @ (f @ v) == pytest.approx(v @ g @ (s @ v), rel=1e-12, abs=1e-12)
        assert sys.self_adjoint_quadratic(chart, p, v, 0.0) == pytest.approx(
            v @ g @ (s @ v), rel=1e-12, abs=1e-12
        )


def test_gradient_field_euclidean():
    chart = euclidean_chart(2)
    sys = ForceSystem(chart.coord_names, potential="x^2 + y^2")
    grad = sys.gradient_field(chart, [1.0, 2.0], 0.0)
    assert np.allclose(grad, [2.0, 4.0])


def test_gradient_field_plane_wave_profile():
    # V = -H/2 with H = x^2 (quadratic profile, first coefficient 1)
    chart = euclidean_chart(2)
    sys = ForceSystem(chart.coord_names, potential="-(x^2)/2")
    for x, y in [(1.0, 0.5), (-2.0, 3.0)]:
        grad = sys.gradient_field(chart, [x, y], 0.0)
        assert np.allclose(grad, [-x, 0.0])


def test_gradient_field_scaled_metric():
    chart = ManifoldChartScaled()
    sys = ForceSystem(("x",), potential="x^2")
    grad = sys.gradient_field(chart, [1.0], 0.0)
    assert grad[0] == pytest.approx(0.5)


def ManifoldChartScaled():
    from trajlab.geometry import ManifoldChart

    return ManifoldChart(("x",), [["4"]])


def test_gradient_of_constant_potential_is_zero():
    chart = euclidean_chart(2)
    sys = ForceSystem(chart.coord_names, potential="3.5")
    assert np.allclose(sys.gradient_field(chart, [0.4, -1.0], 2.0), 0.0)
    assert sys.potential_time_derivative_at([0.4, -1.0], 2.0) == 0.0


def test_eval_force_external_power_field():
    from trajlab.expressions import parse

    chart = euclidean_chart(1, ("x",))
    sys = ForceSystem(
        ("x",),
        external_field=[parse("(1+eps)*x^(1+2*eps)", params={"eps": 0.5})],
    )
    out = sys.eval_force(chart, [4.0], [0.0], 0.0)
    assert out[0] == pytest.approx(24.0)


def test_eval_force_velocity_proportional():
    chart = euclidean_chart(1, ("x",))
    sys = ForceSystem(("x",), force_matrix=[["-abs(x)"]])
    out = sys.eval_force(chart, [3.0], [2.0], 0.0)
    assert out[0] == pytest.approx(-6.0)


def test_eval_force_geodesic_zero():
    chart = euclidean_chart(2)
    sys = ForceSystem(chart.coord_names)
    assert np.allclose(sys.eval_force(chart, [1.0, 2.0], [3.0, 4.0], 0.0), 0.0)


def test_potential_and_field_mutually_exclusive():
    with pytest.raises(ForceSystemError):
        ForceSystem(("x",), external_field=["x"], potential="x^2")


def test_autonomy_detection():
    assert ForceSystem(("x",), external_field=["x^2"]).autonomous
    assert not ForceSystem(("x",), external_field=["x*sin(t)"]).autonomous
    assert not ForceSystem(("x",), potential="x^2*t").autonomous


def test_dimension_mismatch_rejected():
    with pytest.raises(ForceSystemError):
        ForceSystem(("x", "y"), external_field=["x"])
    with pytest.raises(ForceSystemError):
        ForceSystem(("x", "y"), force_matrix=[["1", "0"]])


def test_unknown_names_rejected():
    with pytest.raises(Exception):
        ForceSystem(("x",), external_field=["x + q"])
