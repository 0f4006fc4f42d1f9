"""Trajectory integration: coordinate equations, blow-up handling, lifts.

The second-order system is autonomised to first order in the state
(position, velocity); accelerations are

    a^i = -Gamma^i_jk v^j v^k + F^i_j(p, t) v^j + X^i(p, t),

with X replaced by -grad V when the force system carries a potential.

A problem integrates as two runs: forward from t0 to the horizon top and
backward from t0 to the horizon bottom.  The backward run is realised as
the forward run of the time-reversed system (t -> -t, F -> -F, v -> -v),
so one stepping code path serves both directions.

Blow-up policy: a run ends with a blow-up status when the speed crosses
the ceiling, or when the step collapses while the speed has grown by at
least 10x over the trailing accepted steps; a bare step collapse (or a
non-finite right-hand side at moderate speed) is a step failure, which
signals an expression domain problem rather than velocity escape.  The
blow-up time estimate extrapolates the times at which the speed first
crosses the decade thresholds 1e3..1e8 with iterated Aitken
delta-squared acceleration.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import expressions as ex
from .expressions import Expression, Var
from .forces import ForceSystem
from .geometry import (
    DegenerateMetricError,
    GeometryError,
    ManifoldChart,
    RIEMANNIAN,
    symbolic_inverse,
)
from .rk import DenseSegment, DenseSolution, DormandPrince, StepCollapse

__all__ = [
    "TrajectoryProblem",
    "IntegrationResult",
    "LegResult",
    "ReachedHorizon",
    "BlowUpForward",
    "BlowUpBackward",
    "StepFailure",
    "ode_rhs",
    "integrate",
    "estimate_blowup",
    "lift_to_product",
    "time_reversed_problem",
    "aitken_limit",
]

SPEED_THRESHOLD_DECADES = range(3, 9)  # crossings recorded at 1e3 .. 1e8


@dataclass(frozen=True)
class TrajectoryProblem:
    chart: ManifoldChart
    forces: ForceSystem
    initial_point: tuple
    initial_velocity: tuple
    initial_time: float = 0.0
    horizon: tuple = (0.0, 10.0)
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    speed_ceiling: float = 1e8
    h_min_scale: float = 1e-13
    samples_per_run: int = 512
    time_label: str = "t"

    def __post_init__(self):
        object.__setattr__(
            self, "initial_point", tuple(float(v) for v in self.initial_point)
        )
        object.__setattr__(
            self, "initial_velocity", tuple(float(v) for v in self.initial_velocity)
        )
        object.__setattr__(self, "horizon", tuple(float(v) for v in self.horizon))
        dim = self.chart.dim
        if len(self.initial_point) != dim or len(self.initial_velocity) != dim:
            raise ValueError(f"initial data must have {dim} components")
        if self.forces.dim != dim or self.forces.coord_names != self.chart.coord_names:
            raise ValueError("force system does not match the chart coordinates")
        t_min, t_max = self.horizon
        if not (t_min <= self.initial_time <= t_max):
            raise ValueError("initial time must lie inside the horizon")

    @property
    def dim(self) -> int:
        return self.chart.dim


# -- statuses ----------------------------------------------------------------


@dataclass(frozen=True)
class ReachedHorizon:
    kind = "reached-horizon"


@dataclass(frozen=True)
class BlowUpForward:
    t_est: float
    t_last: float
    kind = "blow-up-forward"


@dataclass(frozen=True)
class BlowUpBackward:
    t_est: float
    t_last: float
    kind = "blow-up-backward"


@dataclass(frozen=True)
class StepFailure:
    t: float
    reason: str
    kind = "step-failure"


@dataclass
class LegResult:
    """One direction of a run, reported in original (unreversed) time."""

    direction: str  # "forward" | "backward"
    times: np.ndarray  # ascending sample times
    positions: np.ndarray  # (n, dim)
    velocities: np.ndarray  # (n, dim)
    u: np.ndarray  # g(v, v) at the samples
    status: str  # "reached" | "blow-up" | "failure"
    t_last: float
    t_est: float | None = None
    failure_reason: str | None = None
    crossings: list = field(default_factory=list)  # (decade k, time)
    n_accepted: int = 0
    n_rejected: int = 0


@dataclass
class IntegrationResult:
    problem: TrajectoryProblem
    status: object
    legs: list
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    u: np.ndarray

    @property
    def samples(self):
        return list(zip(self.times, self.positions, self.velocities))

    @property
    def speed_series(self):
        return list(zip(self.times, self.u))

    def leg(self, direction: str) -> LegResult | None:
        for leg in self.legs:
            if leg.direction == direction:
                return leg
        return None


# -- right-hand side ----------------------------------------------------------


def _acceleration(problem: TrajectoryProblem, p: np.ndarray, v: np.ndarray, t: float):
    a = problem.forces.eval_force(problem.chart, p, v, t)
    if not problem.chart._christoffel_trivial:
        gamma = problem.chart.christoffel(p)
        a = a - np.einsum("ijk,j,k->i", gamma, v, v)
    return a


def ode_rhs(problem: TrajectoryProblem, state):
    """First-order field at state (position, velocity, t).

    Returns (velocity, acceleration, 1.0); the trailing 1 is dt/dt of the
    autonomised system.
    """
    p, v, t = state
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return v.copy(), _acceleration(problem, p, v, t), 1.0


def _first_order_field(problem: TrajectoryProblem, error_cell: list | None = None):
    """First-order RHS; expression/geometry failures surface as ValueError
    so the stepper retries with smaller steps (recording the message)."""
    dim = problem.dim

    def f(t, y):
        p = y[:dim]
        v = y[dim:]
        out = np.empty_like(y)
        out[:dim] = v
        try:
            out[dim:] = _acceleration(problem, p, v, t)
        except (ex.EvaluationError, GeometryError) as err:
            if error_cell is not None:
                error_cell[0] = str(err)
            raise ValueError(str(err)) from err
        return out

    return f


# -- time reversal -------------------------------------------------------------


def _reverse_time(e: Expression) -> Expression:
    return ex.substitute(e, {"t": ex.neg(Var("t"))})


def time_reversed_problem(problem: TrajectoryProblem) -> TrajectoryProblem:
    """The forward problem equivalent to running *problem* backwards.

    Positions are kept, velocities flip sign, F flips sign, X and V keep
    their sign, and every field sees t -> -t.  A solution gamma*(s) of the
    reversed problem corresponds to gamma(t) = gamma*(-t).
    """
    forces = problem.forces
    f_rows = None
    if forces.F is not None:
        f_rows = [[ex.neg(_reverse_time(e)) for e in row] for row in forces.F]
    x_comps = None
    if forces.X is not None:
        x_comps = [_reverse_time(e) for e in forces.X]
    v_expr = _reverse_time(forces.V) if forces.V is not None else None
    reversed_forces = ForceSystem(
        forces.coord_names,
        force_matrix=f_rows,
        external_field=x_comps,
        potential=v_expr,
    )
    t_min, t_max = problem.horizon
    return replace(
        problem,
        forces=reversed_forces,
        initial_velocity=tuple(-v for v in problem.initial_velocity),
        initial_time=-problem.initial_time,
        horizon=(-t_max, -t_min),
    )


# -- integration ---------------------------------------------------------------


def _speed_measure(problem: TrajectoryProblem, p: np.ndarray, v: np.ndarray):
    """(u, speed): u = g(v, v); the blow-up monitor uses sqrt(u) on
    Riemannian charts and the coordinate norm on pseudo-Riemannian ones."""
    u = problem.chart.speed_squared(p, v)
    if problem.chart.signature == RIEMANNIAN:
        return u, math.sqrt(max(u, 0.0))
    return u, float(np.linalg.norm(v))


def _locate_crossing(speed_of, t_lo, t_hi, threshold):
    """Bisect the first time speed crosses *threshold* inside (t_lo, t_hi]."""
    lo, hi = t_lo, t_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if speed_of(mid) < threshold:
            lo = mid
        else:
            hi = mid
    return hi


def _run_leg(problem: TrajectoryProblem, t_end: float) -> tuple:
    """Integrate forward from problem.initial_time to t_end.

    Returns (status, t_last, t_est, reason, crossings, sampler, stats).
    """
    dim = problem.dim
    last_rhs_error: list = [None]
    f = _first_order_field(problem, last_rhs_error)
    t0 = problem.initial_time
    y0 = np.concatenate([problem.initial_point, problem.initial_velocity])

    def h_floor(t):
        return problem.h_min_scale * max(1.0, abs(t))

    stepper = DormandPrince(
        f, t0, y0, problem.rel_tol, problem.abs_tol, h_floor=h_floor
    )
    segments: list[DenseSegment] = []
    thresholds = {k: 10.0**k for k in SPEED_THRESHOLD_DECADES}
    crossings: list[tuple[int, float]] = []
    speed_history: deque[float] = deque(maxlen=100)
    _, speed = _speed_measure(problem, y0[:dim], y0[dim:])
    speed_history.append(speed)
    pending = {k: thr for k, thr in thresholds.items() if thr > speed}

    def speed_at(segment: DenseSegment, t: float) -> float:
        y = segment(t)
        return _speed_measure(problem, y[:dim], y[dim:])[1]

    status, t_last, t_est, reason = "reached", t0, None, None
    max_steps = 2_000_000
    while True:
        if stepper.n_accepted >= max_steps:
            status, t_last, reason = "failure", stepper.t, "step budget exhausted"
            break
        try:
            segment = stepper.step(t_end)
        except StepCollapse as collapse:
            grew = len(speed_history) >= 2 and speed >= 10.0 * speed_history[0]
            if grew:
                status, t_last = "blow-up", stepper.t
            else:
                reason = collapse.reason
                if reason == "non-finite right-hand side" and last_rhs_error[0]:
                    reason = f"{reason}: {last_rhs_error[0]}"
                status, t_last = "failure", stepper.t
            break
        segments.append(segment)
        prev_speed = speed
        try:
            _, speed = _speed_measure(problem, stepper.y[:dim], stepper.y[dim:])
        except (DegenerateMetricError, ex.EvaluationError) as err:
            status, t_last, reason = "failure", stepper.t, str(err)
            break
        speed_history.append(speed)
        for k in sorted(pending):
            thr = pending[k]
            if prev_speed < thr <= speed:
                t_cross = _locate_crossing(
                    lambda q: speed_at(segment, q), segment.t0, segment.t1, thr
                )
                crossings.append((k, t_cross))
                del pending[k]
        if speed >= problem.speed_ceiling:
            status, t_last = "blow-up", stepper.t
            break
        if stepper.t >= t_end - 1e-14 * max(1.0, abs(t_end)):
            status, t_last = "reached", stepper.t
            break

    if status == "blow-up":
        t_est = _blowup_estimate_from_crossings(crossings, t_last)

    sampler = DenseSolution(segments) if segments else None
    stats = (stepper.n_accepted, stepper.n_rejected)
    return status, t_last, t_est, reason, crossings, sampler, stats


def _sample_leg(problem, sampler, t_start, t_stop, n) -> tuple:
    dim = problem.dim
    times = np.linspace(t_start, t_stop, n)
    positions = np.empty((n, dim))
    velocities = np.empty((n, dim))
    u = np.empty(n)
    for i, t in enumerate(times):
        y = sampler(t) if sampler is not None else None
        if y is None:
            y = np.concatenate([problem.initial_point, problem.initial_velocity])
        positions[i] = y[:dim]
        velocities[i] = y[dim:]
        try:
            u[i] = problem.chart.speed_squared(positions[i], velocities[i])
        except (DegenerateMetricError, ex.EvaluationError):
            u[i] = math.nan
    return times, positions, velocities, u


def _leg_result(problem, direction, raw, reversed_run: bool) -> LegResult:
    status, t_last, t_est, reason, crossings, sampler, stats = raw
    n = problem.samples_per_run
    t0 = problem.initial_time
    if sampler is None or t_last == t0:
        times, positions, velocities, u = _sample_leg(problem, None, t0, t0, 1)
    else:
        times, positions, velocities, u = _sample_leg(
            problem, sampler, t0, t_last, n
        )
    if reversed_run:
        times = -times[::-1]
        positions = positions[::-1]
        velocities = -velocities[::-1]
        u = u[::-1]
        t_last = -t_last
        t_est = -t_est if t_est is not None else None
        crossings = [(k, -t) for k, t in crossings]
    return LegResult(
        direction=direction,
        times=times,
        positions=positions,
        velocities=velocities,
        u=u,
        status=status,
        t_last=t_last,
        t_est=t_est,
        failure_reason=reason,
        crossings=crossings,
        n_accepted=stats[0],
        n_rejected=stats[1],
    )


def integrate(problem: TrajectoryProblem) -> IntegrationResult:
    """Run forward and backward from the initial time across the horizon."""
    t_min, t_max = problem.horizon
    legs: list[LegResult] = []
    if t_min < problem.initial_time:
        reversed_problem = time_reversed_problem(problem)
        raw = _run_leg(reversed_problem, reversed_problem.horizon[1])
        legs.append(_leg_result(reversed_problem, "backward", raw, reversed_run=True))
    if t_max > problem.initial_time:
        raw = _run_leg(problem, t_max)
        legs.append(_leg_result(problem, "forward", raw, reversed_run=False))

    forward = next((l for l in legs if l.direction == "forward"), None)
    backward = next((l for l in legs if l.direction == "backward"), None)
    failed = next((l for l in legs if l.status == "failure"), None)
    if failed is not None:
        status = StepFailure(failed.t_last, failed.failure_reason or "step failure")
    elif forward is not None and forward.status == "blow-up":
        status = BlowUpForward(forward.t_est, forward.t_last)
    elif backward is not None and backward.status == "blow-up":
        status = BlowUpBackward(backward.t_est, backward.t_last)
    else:
        status = ReachedHorizon()

    blocks = [l for l in sorted(legs, key=lambda l: l.times[0])]
    times = np.concatenate([b.times for b in blocks])
    positions = np.concatenate([b.positions for b in blocks])
    velocities = np.concatenate([b.velocities for b in blocks])
    u = np.concatenate([b.u for b in blocks])
    if len(blocks) == 2:
        # both legs sample the initial state; drop the duplicate
        keep = np.ones(len(times), dtype=bool)
        keep[len(blocks[0].times)] = False
        times, positions = times[keep], positions[keep]
        velocities, u = velocities[keep], u[keep]
    return IntegrationResult(
        problem=problem,
        status=status,
        legs=legs,
        times=times,
        positions=positions,
        velocities=velocities,
        u=u,
    )


# -- blow-up estimation ---------------------------------------------------------


def aitken_limit(values: Sequence[float]) -> float:
    """Iterated Aitken delta-squared limit of a convergent sequence."""
    cur = [float(v) for v in values]
    while len(cur) >= 3:
        nxt = []
        for i in range(len(cur) - 2):
            d2 = cur[i + 2] - 2.0 * cur[i + 1] + cur[i]
            if abs(d2) < 1e3 * np.finfo(float).eps * max(1.0, abs(cur[i + 2])):
                nxt = []
                break
            nxt.append(cur[i + 2] - (cur[i + 2] - cur[i + 1]) ** 2 / d2)
        if not nxt:
            break
        cur = nxt
    return cur[-1]


def _blowup_estimate_from_crossings(crossings, t_last: float) -> float:
    if len(crossings) < 3:
        return t_last
    times = [t for _, t in sorted(crossings)]
    return aitken_limit(times)


def estimate_blowup(result: IntegrationResult) -> float:
    """Blow-up time from the decade-threshold crossings of the blown leg."""
    status = result.status
    if isinstance(status, BlowUpForward):
        leg = result.leg("forward")
    elif isinstance(status, BlowUpBackward):
        leg = result.leg("backward")
    else:
        raise ValueError("estimate_blowup requires a blow-up status")
    if leg.direction == "backward":
        # crossings are stored in original time; extrapolate in run time
        values = sorted((-t for _, t in leg.crossings))
        if len(values) < 3:
            return leg.t_last
        return -aitken_limit(values)
    return _blowup_estimate_from_crossings(leg.crossings, leg.t_last)


# -- product lift ----------------------------------------------------------------


def _fresh_name(base: str, taken) -> str:
    name = base
    i = 1
    while name in taken or name == "t":
        name = f"{base}{i}"
        i += 1
    return name


def lift_to_product(
    problem: TrajectoryProblem,
    tau_start: float | None = None,
    tau_velocity: float = 1.0,
) -> TrajectoryProblem:
    """Autonomise on chart x R with metric g (+) dtau^2.

    The time argument of every field becomes the new coordinate tau, the
    lifted F gains a zero row/column, the lifted external field a zero
    component, and the initial data append (tau_start, tau_velocity)
    (defaults: the initial time, slope 1, so tau(t) = t).  A potential is
    materialised as its explicit gradient field first: lifting V itself
    would add the dV/dt component that the lifted dynamics must not see.
    """
    chart = problem.chart
    tau = _fresh_name("tau", chart.coord_names)
    lifted_names = chart.coord_names + (tau,)
    dim = chart.dim

    zero = ex.Const(0.0)
    one = ex.Const(1.0)
    metric_rows = []
    for i in range(dim):
        metric_rows.append(list(chart.metric[i]) + [zero])
    metric_rows.append([zero] * dim + [one])

    t0 = problem.initial_time
    box = list(chart.sample_box) + [(t0 - 2.0, t0 + 2.0)]
    lifted_chart = ManifoldChart(
        lifted_names, metric_rows, signature=chart.signature, sample_box=box
    )

    def lift_expr(e: Expression) -> Expression:
        return ex.substitute(e, {"t": Var(tau)})

    forces = problem.forces
    f_rows = None
    if forces.F is not None:
        f_rows = [
            [lift_expr(e) for e in row] + [zero] for row in forces.F
        ]
        f_rows.append([zero] * (dim + 1))

    if forces.V is not None:
        g_inv = symbolic_inverse([list(row) for row in chart.metric])
        x_comps = []
        for i in range(dim):
            total = None
            for j in range(dim):
                term = ex.mul(g_inv[i][j], forces.dV_dx[j])
                total = term if total is None else ex.add(total, term)
            x_comps.append(lift_expr(ex.neg(total)))
        x_comps.append(zero)
    elif forces.X is not None:
        x_comps = [lift_expr(e) for e in forces.X] + [zero]
    else:
        x_comps = None

    lifted_forces = ForceSystem(
        lifted_names, force_matrix=f_rows, external_field=x_comps
    )
    tau0 = t0 if tau_start is None else float(tau_start)
    return replace(
        problem,
        chart=lifted_chart,
        forces=lifted_forces,
        initial_point=problem.initial_point + (tau0,),
        initial_velocity=problem.initial_velocity + (float(tau_velocity),),
    )
