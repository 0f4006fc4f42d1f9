import math

import numpy as np
import pytest

from trajlab.dynamics import (
    BlowUpBackward,
    BlowUpForward,
    ReachedHorizon,
    StepFailure,
    TrajectoryProblem,
    aitken_limit,
    estimate_blowup,
    integrate,
    lift_to_product,
    ode_rhs,
    time_reversed_problem,
)
from trajlab.forces import ForceSystem
from trajlab.geometry import euclidean_chart, polar_chart
from trajlab.scenarios import blowup_oracle, builtin


def _line_problem(**kw):
    chart = euclidean_chart(1, ("x",))
    defaults = dict(
        chart=chart,
        forces=ForceSystem(("x",)),
        initial_point=(0.0,),
        initial_velocity=(1.0,),
        horizon=(0.0, 1.0),
    )
    defaults.update(kw)
    return TrajectoryProblem(**defaults)


# -- right-hand side ------------------------------------------------------------


def test_rhs_geodesic_euclidean_is_straight():
    problem = _line_problem()
    v, a, dt = ode_rhs(problem, ((0.3,), (2.0,), 0.0))
    assert v[0] == 2.0 and a[0] == 0.0 and dt == 1.0


def test_rhs_inverted_potential():
    chart = euclidean_chart(1, ("x",))
    problem = _line_problem(forces=ForceSystem(("x",), potential="-(x^2)"))
    _, a, _ = ode_rhs(problem, ((1.0,), (0.0,), 0.0))
    assert a[0] == pytest.approx(2.0)


def test_rhs_polar_centripetal():
    chart = polar_chart()
    problem = TrajectoryProblem(
        chart=chart,
        forces=ForceSystem(chart.coord_names),
        initial_point=(1.0, 0.0),
        initial_velocity=(0.0, 1.0),
        horizon=(0.0, 1.0),
    )
    _, a, _ = ode_rhs(problem, ((1.0, 0.0), (0.0, 1.0), 0.0))
    assert a[0] == pytest.approx(1.0)  # r'' = r theta'^2
    assert a[1] == pytest.approx(0.0)


# -- integration statuses ---------------------------------------------------------


def test_ex2_blows_up_at_unit_time():
    result = integrate(builtin("ex2", eps=1.0))
    assert isinstance(result.status, BlowUpForward)
    assert abs(result.status.t_est - 1.0) <= 1e-3


def test_ex3_backward_blowup_forward_complete():
    result = integrate(builtin("ex3"))
    assert isinstance(result.status, BlowUpBackward)
    assert abs(result.status.t_est + 1.0) <= 1e-3
    forward = result.leg("forward")
    assert forward.status == "reached" and forward.t_last == pytest.approx(100.0)
    assert np.nanmax(forward.u) <= 4.0 + 1e-9  # speed decays from |v0| = 2

    # closed form x(t) = 2/(t+1) on the backward branch
    backward = result.leg("backward")
    mask = backward.times >= -0.9
    x_num = backward.positions[mask, 0]
    x_exact = 2.0 / (backward.times[mask] + 1.0)
    assert np.max(np.abs(x_num - x_exact) / x_exact) <= 1e-6


def test_linear_ode_is_complete():
    from dataclasses import replace

    # x'' = x stays smooth; ceiling raised since cosh(20) exceeds the default
    problem = builtin("linear-spring", k=-1.0, horizon=(0.0, 20.0))
    problem = replace(problem, speed_ceiling=1e10)
    result = integrate(problem)
    assert isinstance(result.status, ReachedHorizon)
    assert result.positions[-1, 0] == pytest.approx(math.cosh(20.0), rel=1e-6)


def test_samples_strictly_ordered_and_u_nonnegative():
    result = integrate(builtin("ex3"))
    assert np.all(np.diff(result.times) > 0)
    assert np.nanmin(result.u) >= -1e-12


def test_step_failure_on_domain_wall():
    # field sqrt(1 - x) is undefined past x = 1; speed stays moderate
    problem = _line_problem(
        forces=ForceSystem(("x",), external_field=["sqrt(1 - x)"]),
        initial_velocity=(0.5,),
        horizon=(0.0, 10.0),
    )
    result = integrate(problem)
    assert isinstance(result.status, StepFailure)
    assert result.status.t == pytest.approx(1.0, abs=0.2)


def test_estimate_blowup_requires_blowup_status():
    result = integrate(builtin("geodesic", chart="euclidean"))
    with pytest.raises(ValueError):
        estimate_blowup(result)


def test_estimate_blowup_matches_status_field():
    result = integrate(builtin("ex2", eps=0.5))
    assert estimate_blowup(result) == pytest.approx(result.status.t_est)
    assert abs(result.status.t_est - 2.0) <= 2e-3


def test_blowup_crossings_recorded_in_decades():
    result = integrate(builtin("ex2", eps=1.0))
    ks = [k for k, _ in result.leg("forward").crossings]
    assert ks == sorted(ks)
    assert set(ks) == {3, 4, 5, 6, 7, 8}


# -- Aitken extrapolation -----------------------------------------------------------


def test_aitken_geometric_sequence_is_exact():
    b, c, q = 1.37, -0.8, 0.31
    seq = [b + c * q**k for k in range(6)]
    assert aitken_limit(seq) == pytest.approx(b, abs=1e-12)


def test_aitken_short_or_degenerate_input():
    assert aitken_limit([3.0, 2.0]) == 2.0
    assert aitken_limit([5.0, 5.0, 5.0, 5.0]) == 5.0  # zero denominators: no update


# -- time reversal ---------------------------------------------------------------


def test_time_reversal_duality_sample_wise():
    problem = builtin("ex3", horizon=(-0.5, 0.0))
    backward = integrate(problem).leg("backward")

    # independently built mirror: F -> -F (t -> -t is vacuous here), v -> -v
    mirror = TrajectoryProblem(
        chart=problem.chart,
        forces=ForceSystem(
            ("x",), force_matrix=[[f"-({problem.forces.F[0][0]})"]]
        ),
        initial_point=problem.initial_point,
        initial_velocity=(2.0,),
        horizon=(0.0, 0.5),
    )
    forward = integrate(mirror).leg("forward")
    assert np.allclose(backward.times, -forward.times[::-1], atol=1e-12)
    assert np.max(np.abs(backward.positions[::-1, 0] - forward.positions[:, 0])) <= 1e-8
    assert np.max(np.abs(backward.velocities[::-1, 0] + forward.velocities[:, 0])) <= 1e-8


def test_time_reversed_problem_round_trip():
    problem = builtin("ex1", eps=1.0, horizon=(-1.0, 1.0))
    twice = time_reversed_problem(time_reversed_problem(problem))
    assert twice.initial_velocity == problem.initial_velocity
    assert twice.horizon == problem.horizon
    state = ((1.3,), (0.4,), 0.2)
    _, a1, _ = ode_rhs(problem, state)
    _, a2, _ = ode_rhs(twice, state)
    assert a1[0] == pytest.approx(a2[0], rel=1e-12)


# -- product lift -----------------------------------------------------------------


def test_lift_chart_is_block_diagonal_with_unit_tail():
    problem = builtin("ex1", eps=1.0)
    lifted = lift_to_product(problem)
    assert lifted.chart.dim == 2
    g = lifted.chart.metric_at([1.0, 5.0])
    assert np.allclose(g, np.eye(2))
    assert lifted.forces.autonomous
    assert lifted.chart.coord_names[-1] == "tau"


def test_lift_of_geodesic_appends_linear_clock():
    problem = builtin("geodesic", chart="euclidean", horizon=(0.0, 5.0))
    lifted = lift_to_product(problem)
    result = integrate(lifted)
    assert isinstance(result.status, ReachedHorizon)
    tau = result.positions[:, -1]
    assert np.max(np.abs(tau - result.times)) <= 1e-10


def test_lift_matches_base_solution():
    b = blowup_oracle("ex1", 1.0)
    base = builtin("ex1", eps=1.0, horizon=(0.0, 0.9 * b))
    lifted = lift_to_product(base)
    res_base = integrate(base)
    res_lift = integrate(lifted)
    assert np.allclose(res_base.times, res_lift.times)
    assert np.max(np.abs(res_lift.positions[:, 0] - res_base.positions[:, 0])) <= 1e-8
    tau = res_lift.positions[:, -1]
    coeff = np.polyfit(res_lift.times, tau, 1)
    assert np.max(np.abs(tau - np.polyval(coeff, res_lift.times))) <= 1e-8


def test_lift_with_doubled_clock_speed():
    base = builtin("ex1", eps=1.0, horizon=(0.0, 0.5))
    lifted = lift_to_product(base, tau_start=0.0, tau_velocity=2.0)
    result = integrate(lifted)
    tau = result.positions[:, -1]
    coeff = np.polyfit(result.times, tau, 1)
    assert coeff[0] == pytest.approx(2.0, abs=1e-10)
    assert np.max(np.abs(tau - np.polyval(coeff, result.times))) <= 1e-8
    # autonomous base: the spatial component still solves the base equation
    res_base = integrate(base)
    assert np.max(np.abs(result.positions[:, 0] - res_base.positions[:, 0])) <= 1e-8


def test_lift_of_time_dependent_potential_drops_dvdt():
    chart = euclidean_chart(1, ("x",))
    problem = TrajectoryProblem(
        chart=chart,
        forces=ForceSystem(("x",), potential="0.5*x^2*(1 + sin(t))"),
        initial_point=(1.0,),
        initial_velocity=(0.0,),
        horizon=(0.0, 3.0),
    )
    lifted = lift_to_product(problem)
    assert lifted.forces.V is None and lifted.forces.X is not None
    # lifted field's last component is exactly zero
    assert str(lifted.forces.X[-1]) == "0.0"
    res_base = integrate(problem)
    res_lift = integrate(lifted)
    assert np.max(np.abs(res_lift.positions[:, 0] - res_base.positions[:, 0])) <= 1e-8
