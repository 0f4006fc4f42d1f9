"""Sampled verification of the completeness criteria and energy identities.

Everything here is region-relative: hypotheses that quantify over the
whole manifold are checked on a user-declared metric ball around a base
point and a time slab [-T, T], so a passing check is a certificate about
the sampled region, never a proof.  Divergence of a bound with the shell
radius (the envelope growing faster than the allowed power) is what turns
a fit into a violation witness.

Scale conventions: growth constants are fitted as the least-squares line
through the per-shell upper envelope, inflated by 5% and then lifted so
the bound holds at every sample; shell-trend tests compare the outer
envelope ratio against the mid-radius one with a 1.3 factor (documented
heuristics; the power-law instances sit well past the threshold while
linear/quadratic fields stay well below it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import expressions as ex
from .expressions import Expression
from .dynamics import IntegrationResult, TrajectoryProblem
from .forces import ForceSystem
from .geometry import ManifoldChart, RIEMANNIAN, SignatureError
from .quadrature import integrate_adaptive
from .rk import StepCollapse, solve

__all__ = [
    "AnalysisError",
    "Region",
    "GridSpec",
    "Witness",
    "GrowthFit",
    "SBounds",
    "CompletenessCertificate",
    "PositiveCompleteness",
    "EnergyResidual",
    "TrajectoryHypotheses",
    "DominatingSolution",
    "bound_S",
    "fit_linear_growth",
    "fit_quadratic_growth",
    "positively_complete_check",
    "energy_residual",
    "check_trajectory_hypotheses",
    "dominating_solution",
    "certify",
    "certify_trajectory",
]

ENVELOPE_INFLATION = 1.05
SHELL_RATIO_FACTOR = 1.3
SUP_TREND_FACTOR = 1.5
SUP_TREND_MARGIN = 0.1
_DIRECTION_SEED = 20240810


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class Region:
    """Metric ball: center point and radius (chart distance)."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0.0:
            raise AnalysisError("region radius must be positive")


@dataclass(frozen=True)
class GridSpec:
    n_shells: int = 64
    n_directions: int = 32
    n_times: int = 33

    def halved_stride(self) -> "GridSpec":
        return GridSpec(2 * self.n_shells, 2 * self.n_directions, 2 * self.n_times - 1)


@dataclass(frozen=True)
class Witness:
    point: tuple
    time: float
    value: float
    detail: str


@dataclass
class GrowthFit:
    base_point: tuple
    time_window: float
    a: float
    c: float
    kind: str  # "linear" | "quadratic"
    violation: Witness | None
    n_samples: int


@dataclass
class SBounds:
    s_inf: float
    s_sup: float
    norm: float
    sup_violation: Witness | None = None
    inf_violation: Witness | None = None


@dataclass
class PositiveCompleteness:
    verdict: str  # "sufficient-quadratic" | "numerically-divergent" | "inconclusive"
    heuristic: bool
    a: float | None = None
    c: float | None = None
    increments: tuple = ()


@dataclass
class EnergyResidual:
    max_abs: float
    scale: float  # max |du/dt|, floored by the energy-over-duration scale

    @property
    def relative(self) -> float:
        return self.max_abs / self.scale if self.scale > 0 else self.max_abs


@dataclass
class TrajectoryHypotheses:
    c_gamma: float
    r_gamma: float
    l_times: np.ndarray
    l_values: np.ndarray
    distance_dominated: bool | None  # None when the chart distance is inexact
    c_violation: Witness | None
    r_violation: Witness | None


@dataclass
class DominatingSolution:
    times: np.ndarray
    values: np.ndarray

    def at(self, t):
        return np.interp(t, self.times, self.values)


@dataclass
class CompletenessCertificate:
    theorem: str
    direction: str
    constants: dict
    assumptions: list
    verdict: str  # "certified" | "certified-heuristic" | "not-certified"
    reason: str | None = None
    witnesses: list = field(default_factory=list)
    also_applicable: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.verdict in ("certified", "certified-heuristic")


# -- sampling grid -----------------------------------------------------------------


def _directions(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        angles = 2.0 * math.pi * np.arange(n) / n
        return np.column_stack([np.cos(angles), np.sin(angles)])
    rng = np.random.default_rng(_DIRECTION_SEED)
    vecs = rng.standard_normal((n, dim))
    return vecs / np.linalg.norm(vecs, axis=1)[:, None]


@dataclass
class _Grid:
    points: np.ndarray  # (m, dim); first row is the center
    distances: np.ndarray  # (m,)
    shell: np.ndarray  # (m,) ints, 0 at the center
    times: np.ndarray


def _require_riemannian(chart: ManifoldChart, what: str):
    if chart.signature != RIEMANNIAN:
        raise SignatureError(f"{what} requires a Riemannian chart")


def _build_grid(chart: ManifoldChart, region: Region, T: float, grid: GridSpec) -> _Grid:
    _require_riemannian(chart, "region sampling")
    center = np.asarray(region.center, dtype=float)
    g0 = chart.metric_at(center)
    points = [center]
    distances = [0.0]
    shells = [0]
    for u in _directions(chart.dim, grid.n_directions):
        norm_g = math.sqrt(float(u @ g0 @ u))
        u_g = u / norm_g
        for k in range(1, grid.n_shells + 1):
            r = region.radius * k / grid.n_shells
            p = center + r * u_g
            try:
                d, _ = chart.chart_distance(center, p)
            except Exception:
                continue  # outside the chart's valid set; skip the ray point
            points.append(p)
            distances.append(d)
            shells.append(k)
    times = np.linspace(-T, T, grid.n_times)
    return _Grid(np.array(points), np.array(distances), np.array(shells), times)


# -- envelope fitting ----------------------------------------------------------------


def _nonneg_line_fit(reg: np.ndarray, val: np.ndarray) -> tuple:
    """Least-squares val ~ a*reg + c with a, c clamped nonnegative."""
    if len(reg) == 0:
        return 0.0, 0.0
    a_mat = np.column_stack([reg, np.ones_like(reg)])
    (a, c), *_ = np.linalg.lstsq(a_mat, val, rcond=None)
    if a < 0.0:
        a = 0.0
        c = float(np.mean(val))
    if c < 0.0:
        c = 0.0
        denom = float(reg @ reg)
        a = float(reg @ val) / denom if denom > 0 else 0.0
        a = max(a, 0.0)
    return float(a), float(c)


def _fit_growth(
    grid: _Grid,
    values: np.ndarray,  # (m, n_times)
    power: int,
    base_point,
    T: float,
    kind: str,
) -> GrowthFit:
    peak = values.max(axis=1)  # max over the time slab per point
    reg_all = grid.distances**power

    # per-shell envelope
    n_shells = int(grid.shell.max()) if len(grid.shell) else 0
    env_d, env_m, env_idx = [], [], []
    for k in range(1, n_shells + 1):
        mask = grid.shell == k
        if not mask.any():
            continue
        i_local = np.argmax(np.where(mask, peak, -np.inf))
        env_d.append(grid.distances[i_local])
        env_m.append(peak[i_local])
        env_idx.append(i_local)

    env_d = np.array(env_d)
    env_m = np.array(env_m)
    a, c = _nonneg_line_fit(env_d**power, env_m)
    a *= ENVELOPE_INFLATION
    c *= ENVELOPE_INFLATION
    deficit = float(np.max(peak - (a * reg_all + c))) if len(peak) else 0.0
    if deficit > 0.0:
        c += deficit

    violation = None
    if len(env_d) >= 4:
        i_out = int(np.argmax(env_d))
        d_out = env_d[i_out]
        i_mid = int(np.argmin(np.abs(env_d - 0.5 * d_out)))
        if env_d[i_mid] > 0 and d_out > env_d[i_mid]:
            rho_out = env_m[i_out] / env_d[i_out] ** power
            rho_mid = env_m[i_mid] / env_d[i_mid] ** power
            if rho_mid > 1e-9 and rho_out > SHELL_RATIO_FACTOR * rho_mid:
                sample = env_idx[i_out]
                t_idx = int(np.argmax(values[sample]))
                violation = Witness(
                    point=tuple(grid.points[sample]),
                    time=float(grid.times[t_idx]),
                    value=float(values[sample, t_idx]),
                    detail=(
                        f"envelope ratio grows by {rho_out / rho_mid:.2f}x from "
                        f"d={env_d[i_mid]:.3g} to d={d_out:.3g} "
                        f"(super{'linear' if power == 1 else 'quadratic'} trend)"
                    ),
                )
    return GrowthFit(
        base_point=tuple(base_point),
        time_window=float(T),
        a=a,
        c=c,
        kind=kind,
        violation=violation,
        n_samples=values.size,
    )


# -- field adapters -------------------------------------------------------------------


def _vector_field_fn(field, chart: ManifoldChart):
    if isinstance(field, ForceSystem):
        return lambda p, t: field.external_at(chart, p, t)
    if callable(field):
        return field
    raise AnalysisError("vector field must be a ForceSystem or callable (p, t) -> vector")


def _scalar_field_fn(field, chart: ManifoldChart):
    if isinstance(field, Expression):
        names = list(chart.coord_names) + ["t"]
        extra = field.free_variables() - set(names)
        if extra:
            raise AnalysisError(f"field uses names outside the chart: {sorted(extra)}")

        def fn(p, t, _f=ex.compile_expression(field, names)):
            return _f(*p, t)

        return fn
    if callable(field):
        return field
    raise AnalysisError("scalar field must be an Expression or callable (p, t) -> real")


# -- public fit operations --------------------------------------------------------------


def fit_linear_growth(
    field,
    chart: ManifoldChart,
    region: Region,
    T: float,
    base_point=None,
    grid: GridSpec = GridSpec(),
) -> GrowthFit:
    """Fit |field| <= A * d(p, p0) + C on the sampled region.

    The metric norm of the field is sampled on the shell grid times the
    time slab; a violation witness is recorded when the outer-shell
    envelope ratio |field|/d outruns the mid-radius one.
    """
    fn = _vector_field_fn(field, chart)
    g = _build_grid(chart, region, T, grid)
    base = np.asarray(region.center if base_point is None else base_point, float)
    values = np.empty((len(g.points), len(g.times)))
    for i, p in enumerate(g.points):
        metric = chart.metric_at(p)
        for j, t in enumerate(g.times):
            v = np.asarray(fn(p, t), dtype=float)
            values[i, j] = math.sqrt(max(float(v @ metric @ v), 0.0))
    return _fit_growth(g, values, 1, base, T, "linear")


def fit_quadratic_growth(
    field,
    chart: ManifoldChart,
    region: Region,
    T: float,
    base_point=None,
    grid: GridSpec = GridSpec(),
) -> GrowthFit:
    """Fit scalar field <= A * d(p, p0)^2 + C on the sampled region."""
    fn = _scalar_field_fn(field, chart)
    g = _build_grid(chart, region, T, grid)
    base = np.asarray(region.center if base_point is None else base_point, float)
    values = np.empty((len(g.points), len(g.times)))
    for i, p in enumerate(g.points):
        for j, t in enumerate(g.times):
            values[i, j] = float(fn(p, t))
    return _fit_growth(g, values, 2, base, T, "quadratic")


# -- self-adjoint part bounds -------------------------------------------------------------


def _metric_adjoint_eigs(g: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Eigenvalues of the metric-symmetrised part of F (extremes of
    g(v, Sv) over g-unit vectors)."""
    if g.shape == (1, 1):
        return np.array([f[0, 0]])
    b = 0.5 * ((g @ f) + (g @ f).T)
    l = np.linalg.cholesky(g)
    l_inv = np.linalg.inv(l)
    return np.linalg.eigvalsh(l_inv @ b @ l_inv.T)


def _trend_violation(grid: _Grid, per_point: np.ndarray, times_idx, what: str):
    """Unbounded-growth trend of a nonnegative per-point quantity: the max
    over the outer half of the shells must not outrun the inner half."""
    n_shells = int(grid.shell.max())
    half = n_shells // 2
    inner = per_point[(grid.shell >= 1) & (grid.shell <= half)]
    outer_mask = grid.shell > half
    outer = per_point[outer_mask]
    if len(inner) == 0 or len(outer) == 0:
        return None
    m_in = float(inner.max())
    m_out = float(outer.max())
    if m_out > SUP_TREND_FACTOR * max(m_in, 0.0) + SUP_TREND_MARGIN:
        idx_global = int(np.argmax(np.where(outer_mask, per_point, -np.inf)))
        return Witness(
            point=tuple(grid.points[idx_global]),
            time=float(grid.times[times_idx[idx_global]]),
            value=m_out,
            detail=f"{what} grows from {m_in:.3g} to {m_out:.3g} across shells",
        )
    return None


def bound_S(
    system: ForceSystem,
    chart: ManifoldChart,
    region: Region,
    T: float,
    grid: GridSpec = GridSpec(),
) -> SBounds:
    """Extremes of g(v, Sv) over g-unit v on the sampled region-slab.

    Computed exactly per sample point as the eigenvalues of the metric
    symmetrisation of F.  Shell trends that keep growing with the radius
    yield violation witnesses for the upper (sup) or lower (inf) bound.
    """
    _require_riemannian(chart, "bound_S")
    if system.F is None:
        return SBounds(0.0, 0.0, 0.0)
    g = _build_grid(chart, region, T, grid)
    m = len(g.points)
    sup_p = np.full(m, -np.inf)
    inf_p = np.full(m, np.inf)
    sup_t_idx = np.zeros(m, dtype=int)
    inf_t_idx = np.zeros(m, dtype=int)
    for i, p in enumerate(g.points):
        metric = chart.metric_at(p)
        for j, t in enumerate(g.times):
            eigs = _metric_adjoint_eigs(metric, system.force_matrix_at(p, t))
            if eigs[-1] > sup_p[i]:
                sup_p[i] = eigs[-1]
                sup_t_idx[i] = j
            if eigs[0] < inf_p[i]:
                inf_p[i] = eigs[0]
                inf_t_idx[i] = j
    s_sup = float(sup_p.max())
    s_inf = float(inf_p.min())
    sup_w = _trend_violation(g, sup_p, sup_t_idx, "sup of g(v, Sv)")
    inf_w = _trend_violation(g, -inf_p, inf_t_idx, "-inf of g(v, Sv)")
    return SBounds(
        s_inf=s_inf,
        s_sup=s_sup,
        norm=max(abs(s_sup), abs(s_inf)),
        sup_violation=sup_w,
        inf_violation=inf_w,
    )


# -- positive completeness ------------------------------------------------------------------


def positively_complete_check(
    v0: Expression,
    s_max: float = 256.0,
    n_samples: int = 513,
) -> PositiveCompleteness:
    """Classify a non-increasing profile V0(s) on [0, s_max].

    sufficient-quadratic: a quadratic envelope fitted on the inner half
    of the range still dominates -V0 on the outer half (quadratic decay
    is sufficient for positive completeness).  Otherwise the partial
    integrals I(S) of 1/sqrt(alpha - V0) are examined over six radius
    doublings: when their increments do not decay (non-decreasing, or a
    tail ratio >= 0.8) the integral is judged divergent.  Both non-quadratic
    verdicts are heuristics.
    """
    names = sorted(v0.free_variables())
    if len(names) > 1:
        raise AnalysisError(f"profile must have one free variable, got {names}")
    var = names[0] if names else "s"
    fn = ex.compile_expression(v0, [var])

    s_grid = np.linspace(0.0, s_max, n_samples)
    vals = np.array([fn(s) for s in s_grid])
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.any(np.diff(vals) > 1e-9 * scale):
        bad = int(np.argmax(np.diff(vals)))
        raise AnalysisError(
            f"profile is not non-increasing near s={s_grid[bad]:.6g}"
        )

    # inner-fit / outer-validate quadratic envelope
    half = n_samples // 2
    neg = -vals
    a, c = _nonneg_line_fit(s_grid[:half] ** 2, neg[:half])
    a *= ENVELOPE_INFLATION
    c *= ENVELOPE_INFLATION
    deficit_inner = float(np.max(neg[:half] - (a * s_grid[:half] ** 2 + c)))
    if deficit_inner > 0.0:
        c += deficit_inner
    slack = 1e-9 * max(1.0, float(np.max(np.abs(neg))))
    if np.all(neg[half:] <= a * s_grid[half:] ** 2 + c + slack):
        return PositiveCompleteness("sufficient-quadratic", heuristic=False, a=a, c=c)

    alpha = fn(0.0) + 1.0

    def integrand(s: float) -> float:
        return 1.0 / math.sqrt(alpha - fn(s))

    s0 = s_max / 2.0**6
    increments = []
    lo = s0
    for _ in range(6):
        hi = 2.0 * lo
        increments.append(integrate_adaptive(integrand, lo, hi, rel_tol=1e-10))
        lo = hi
    increments = np.array(increments)
    ratios = increments[1:] / increments[:-1]
    divergent = bool(np.all(ratios >= 1.0 - 1e-9) or ratios[-1] >= 0.8)
    verdict = "numerically-divergent" if divergent else "inconclusive"
    return PositiveCompleteness(
        verdict, heuristic=True, increments=tuple(float(v) for v in increments)
    )


# -- energy identity ---------------------------------------------------------------------


def energy_residual(
    result: IntegrationResult,
    system: ForceSystem | None = None,
    chart: ManifoldChart | None = None,
) -> EnergyResidual:
    """Residual of d/dt(u/2 + V) = g(v, Sv) + dV/dt along the samples.

    The derivative of the energy uses 4th-order central differences on
    each leg's uniform sample grid; a missing V is treated as zero, which
    reduces the identity to the pure power balance of the force tensor.
    """
    system = system if system is not None else result.problem.forces
    chart = chart if chart is not None else result.problem.chart
    max_abs = 0.0
    scale = 0.0
    for leg in result.legs:
        n = len(leg.times)
        if n < 5:
            continue
        h = leg.times[1] - leg.times[0]
        energy = 0.5 * leg.u
        if system.V is not None:
            energy = energy + np.array(
                [
                    system.potential_at(p, t)
                    for p, t in zip(leg.positions, leg.times)
                ]
            )
        d_energy = (
            energy[:-4] - 8.0 * energy[1:-3] + 8.0 * energy[3:-1] - energy[4:]
        ) / (12.0 * h)
        rhs = np.array(
            [
                system.self_adjoint_quadratic(chart, p, v, t)
                + system.potential_time_derivative_at(p, t)
                for p, v, t in zip(
                    leg.positions[2:-2], leg.velocities[2:-2], leg.times[2:-2]
                )
            ]
        )
        residual = d_energy - rhs
        finite = np.isfinite(residual)
        if finite.any():
            max_abs = max(max_abs, float(np.max(np.abs(residual[finite]))))
            du = (leg.u[:-4] - 8.0 * leg.u[1:-3] + 8.0 * leg.u[3:-1] - leg.u[4:]) / (
                12.0 * h
            )
            duration = abs(leg.times[-1] - leg.times[0])
            floor = float(np.max(np.abs(energy))) / max(duration, 1e-300)
            du_finite = du[np.isfinite(du)]
            du_max = float(np.max(np.abs(du_finite))) if len(du_finite) else 0.0
            scale = max(scale, du_max, floor)
    return EnergyResidual(max_abs=max_abs, scale=max(scale, 1e-300))


# -- along-trajectory hypotheses ------------------------------------------------------------


def _series_trend_witness(times, positions, ratios, what: str) -> Witness | None:
    n = len(ratios)
    if n < 10:
        return None
    head = float(np.max(ratios[: n // 2]))
    tail_slice = slice(int(0.9 * n), n)
    tail = float(np.max(ratios[tail_slice]))
    if tail > SUP_TREND_FACTOR * max(head, 0.0) + SUP_TREND_MARGIN:
        idx = int(0.9 * n) + int(np.argmax(ratios[tail_slice]))
        return Witness(
            point=tuple(positions[idx]),
            time=float(times[idx]),
            value=tail,
            detail=f"{what} grows from {head:.3g} to {tail:.3g} along the run",
        )
    return None


def check_trajectory_hypotheses(
    result: IntegrationResult,
    system: ForceSystem | None = None,
    chart: ManifoldChart | None = None,
    base_point=None,
    direction: str = "forward",
) -> TrajectoryHypotheses:
    """Smallest constants for the along-run conditions, plus the
    arc-length domination d(gamma(t), p0) <= l(t).

    c_gamma bounds g(v, Sv)/u from above (sign flipped on the backward
    leg), r_gamma bounds |X|/(1 + d).  Ratios that keep growing toward
    the end of the run yield violation witnesses.  The distance check is
    exact only on flat charts and is skipped (None) otherwise.
    """
    system = system if system is not None else result.problem.forces
    chart = chart if chart is not None else result.problem.chart
    _require_riemannian(chart, "trajectory hypotheses")
    leg = result.leg(direction)
    if leg is None:
        raise AnalysisError(f"no {direction} leg in the result")
    p0 = np.asarray(
        result.problem.initial_point if base_point is None else base_point, float
    )
    sign = 1.0 if direction == "forward" else -1.0

    u_floor = 1e-12 * max(float(np.nanmax(leg.u)), 1.0)
    c_ratios = np.zeros(len(leg.times))
    r_ratios = np.zeros(len(leg.times))
    distances = np.empty(len(leg.times))
    for i, (p, v, t, u) in enumerate(
        zip(leg.positions, leg.velocities, leg.times, leg.u)
    ):
        distances[i], _ = chart.chart_distance(p0, p)
        if system.F is not None and u > u_floor:
            c_ratios[i] = sign * system.self_adjoint_quadratic(chart, p, v, t) / u
        x_vec = system.external_at(chart, p, t)
        if x_vec.any():
            g = chart.metric_at(p)
            r_ratios[i] = math.sqrt(max(float(x_vec @ g @ x_vec), 0.0)) / (
                1.0 + distances[i]
            )

    c_gamma = max(0.0, float(np.max(c_ratios)))
    r_gamma = max(0.0, float(np.max(r_ratios)))

    # l(t) = d(start, p0) + integral of sqrt(u)
    if direction == "forward":
        times, speeds, pos = leg.times, np.sqrt(np.maximum(leg.u, 0.0)), leg.positions
        dists = distances
    else:
        times = -leg.times[::-1]
        speeds = np.sqrt(np.maximum(leg.u[::-1], 0.0))
        pos = leg.positions[::-1]
        dists = distances[::-1]
    l_values = dists[0] + np.concatenate(
        [[0.0], np.cumsum(0.5 * (speeds[1:] + speeds[:-1]) * np.diff(times))]
    )
    if chart.is_flat:
        # the bound can hold with equality (monotone legs), so allow the
        # running a-posteriori trapezoid error of the arc-length integral
        # (second differences per interval, padded at the ends, with a
        # 1.5x safety factor)
        n = len(times)
        h = float(np.max(np.diff(times))) if n > 1 else 0.0
        if n > 2:
            sd = np.abs(np.diff(speeds, 2))
            per_interval = np.concatenate([[sd[0]], 0.5 * (sd[1:] + sd[:-1]), [sd[-1]]])
        else:
            per_interval = np.zeros(max(n - 1, 0))
        trap_err = 1.5 * (h / 12.0) * np.concatenate([[0.0], np.cumsum(per_interval)])
        dominated = bool(
            np.all(dists <= l_values + trap_err + 1e-6 * (1.0 + l_values) + 1e-9)
        )
    else:
        dominated = None

    return TrajectoryHypotheses(
        c_gamma=c_gamma,
        r_gamma=r_gamma,
        l_times=times,
        l_values=l_values,
        distance_dominated=dominated,
        c_violation=_series_trend_witness(
            leg.times, leg.positions, c_ratios, "g(v,Sv)/u"
        ),
        r_violation=_series_trend_witness(
            leg.times, leg.positions, r_ratios, "|X|/(1+d)"
        ),
    )


# -- dominating solution (comparison argument) -------------------------------------------------


def dominating_solution(
    phi: Expression,
    f0: float,
    span: float,
    n_samples: int = 513,
) -> DominatingSolution:
    """Integrate df/dt = phi(f), f(0) = f0 over [0, span].

    phi must be positive and non-decreasing on the sampled range (checked
    before and after integrating); the result dominates any h satisfying
    h(t) <= h(0) + integral of phi(h).
    """
    names = sorted(phi.free_variables())
    if len(names) > 1:
        raise AnalysisError(f"phi must have one free variable, got {names}")
    var = names[0] if names else "s"
    fn = ex.compile_expression(phi, [var])

    def check_range(lo: float, hi: float):
        samples = np.linspace(lo, hi, 129)
        vals = np.array([fn(s) for s in samples])
        if np.any(vals <= 0.0):
            bad = samples[int(np.argmin(vals))]
            raise AnalysisError(f"phi must be positive (phi({bad:.6g}) <= 0)")
        if np.any(np.diff(vals) < -1e-9 * max(1.0, float(np.max(np.abs(vals))))):
            raise AnalysisError("phi must be non-decreasing on the sampled range")

    check_range(min(0.0, f0), max(1.0, f0))
    try:
        _, _, dense = solve(
            lambda t, y: np.array([fn(y[0])]), 0.0, [f0], span, rtol=1e-10, atol=1e-12
        )
    except StepCollapse as err:
        raise AnalysisError(f"dominating solution escapes in finite time: {err}") from err
    times = np.linspace(0.0, span, n_samples)
    values = np.array([dense(t)[0] for t in times])
    check_range(min(0.0, f0), float(values.max()))
    return DominatingSolution(times=times, values=values)


# -- certificates -------------------------------------------------------------------------------


def _needed_s_checks(direction: str) -> tuple:
    if direction == "forward":
        return ("sup",)
    if direction == "backward":
        return ("inf",)
    if direction == "both":
        return ("sup", "inf")
    raise AnalysisError("direction must be forward, backward or both")


def certify(
    problem: TrajectoryProblem,
    region: Region,
    T: float,
    direction: str = "both",
    grid: GridSpec = GridSpec(),
) -> CompletenessCertificate:
    """Region-relative certificate for the requested completeness direction.

    With an explicit external field the linear-growth criterion applies
    (plus the S bound matching the direction).  With a potential, the
    quadratic-growth criterion on -V and the signed/absolute dV/dt fit
    apply; when that fails but V is positive and dV/dt is controlled by
    V - beta0 with a bounded S, the bounded-below alternative is granted
    instead.  Non-flat charts downgrade the verdict to heuristic because
    the sampled distances are only upper bounds.
    """
    chart = problem.chart
    _require_riemannian(chart, "certification")
    t_min, t_max = problem.horizon
    if T < max(abs(t_min), abs(t_max)):
        raise AnalysisError(
            f"time window T={T} must cover the horizon (needs at least "
            f"{max(abs(t_min), abs(t_max))})"
        )
    forces = problem.forces
    heuristic = not chart.is_flat
    assumptions = ["metric completeness asserted by user"]
    if heuristic:
        assumptions.append("curved-chart distance heuristic")
    grid_info = {
        "shells": grid.n_shells,
        "directions": grid.n_directions,
        "time_slices": grid.n_times,
        "center": list(region.center),
        "radius": region.radius,
        "T": T,
    }
    constants: dict = {}
    witnesses: list = []
    failures: list = []

    s_bounds = bound_S(forces, chart, region, T, grid)
    constants["N_T"] = s_bounds.norm
    constants["S_sup"] = s_bounds.s_sup
    constants["S_inf"] = s_bounds.s_inf
    for side in _needed_s_checks(direction):
        witness = (
            s_bounds.sup_violation if side == "sup" else s_bounds.inf_violation
        )
        if witness is not None:
            failures.append(f"S is not {side}-bounded on the sampled region")
            witnesses.append(witness)

    if forces.V is not None:
        theorem = "Thm-A02"
        also = ["Cor-2.12"] if forces.autonomous else []

        neg_v = ex.neg(forces.V)
        fit_v = fit_quadratic_growth(neg_v, chart, region, T, region.center, grid)
        constants["negV_A_T"] = fit_v.a
        constants["negV_C_T"] = fit_v.c
        if fit_v.violation is not None:
            failures.append("-V grows superquadratically on the sampled region")
            witnesses.append(fit_v.violation)

        dvdt_fields = {
            "forward": ("dVdt", forces.dV_dt),
            "backward": ("neg_dVdt", ex.neg(forces.dV_dt)),
            "both": ("abs_dVdt", ex.Unary("abs", forces.dV_dt)),
        }
        for dir_key, (label, expr) in dvdt_fields.items():
            fit = fit_quadratic_growth(expr, chart, region, T, region.center, grid)
            constants[f"{label}_A_T"] = fit.a
            constants[f"{label}_C_T"] = fit.c
            if dir_key == direction and fit.violation is not None:
                failures.append(
                    "the time derivative of V grows superquadratically "
                    f"for the {direction} case"
                )
                witnesses.append(fit.violation)

        if failures:
            rescue = _try_bounded_below_alternative(
                problem, region, T, grid, s_bounds, constants
            )
            if rescue is not None:
                verdict = "certified-heuristic" if heuristic else "certified"
                return CompletenessCertificate(
                    theorem="Prop-G01",
                    direction="both",
                    constants=constants,
                    assumptions=assumptions,
                    verdict=verdict,
                    witnesses=[],
                    also_applicable=[],
                    grid=grid_info,
                )
    else:
        theorem = "Thm-A1"
        also = []
        fit_x = fit_linear_growth(forces, chart, region, T, region.center, grid)
        constants["X_A_T"] = fit_x.a
        constants["X_C_T"] = fit_x.c
        if fit_x.violation is not None:
            failures.append("|X| grows superlinearly on the sampled region")
            witnesses.append(fit_x.violation)

    if failures:
        return CompletenessCertificate(
            theorem=theorem,
            direction=direction,
            constants=constants,
            assumptions=assumptions,
            verdict="not-certified",
            reason="; ".join(failures),
            witnesses=witnesses,
            also_applicable=also,
            grid=grid_info,
        )
    verdict = "certified-heuristic" if heuristic else "certified"
    return CompletenessCertificate(
        theorem=theorem,
        direction=direction,
        constants=constants,
        assumptions=assumptions,
        verdict=verdict,
        witnesses=[],
        also_applicable=also,
        grid=grid_info,
    )


def _try_bounded_below_alternative(
    problem: TrajectoryProblem,
    region: Region,
    T: float,
    grid: GridSpec,
    s_bounds: SBounds,
    constants: dict,
):
    """Positive lower bound on V with dV/dt controlled by V - beta0.

    Returns (alpha0, beta0) on success (recorded into constants)."""
    forces = problem.forces
    if forces.V is None or not forces.force_tensor_autonomous:
        return None
    if s_bounds.sup_violation is not None or s_bounds.inf_violation is not None:
        return None
    g = _build_grid(problem.chart, region, T, grid)
    v_vals = np.empty((len(g.points), len(g.times)))
    dv_vals = np.empty_like(v_vals)
    for i, p in enumerate(g.points):
        for j, t in enumerate(g.times):
            v_vals[i, j] = forces.potential_at(p, t)
            dv_vals[i, j] = abs(forces.potential_time_derivative_at(p, t))
    v_min = float(v_vals.min())
    if v_min <= 0.0:
        return None
    beta0 = 0.5 * v_min
    ratios = dv_vals / (v_vals - beta0)
    per_point = ratios.max(axis=1)
    witness = _trend_violation(g, per_point, ratios.argmax(axis=1), "|dV/dt|/(V - beta0)")
    if witness is not None:
        return None
    alpha0 = float(per_point.max())
    constants["alpha0"] = alpha0
    constants["beta0"] = beta0
    return alpha0, beta0


def certify_trajectory(
    result: IntegrationResult,
    direction: str = "forward",
    base_point=None,
) -> CompletenessCertificate:
    """Along-run certificate from the computed samples.

    Uses the per-trajectory conditions: bounded g(v,Sv)/u plus linear
    |X| control for force-driven runs, or a quadratic minorant of V along
    the run for potential-driven ones.
    """
    problem = result.problem
    hyps = check_trajectory_hypotheses(result, direction=direction, base_point=base_point)
    heuristic = not problem.chart.is_flat
    constants = {"c_gamma": hyps.c_gamma, "r_gamma": hyps.r_gamma}
    witnesses = [w for w in (hyps.c_violation, hyps.r_violation) if w is not None]
    failures = []
    if hyps.c_violation is not None:
        failures.append("g(v,Sv)/u grows without bound along the run")
    if hyps.r_violation is not None:
        failures.append("|X|/(1+d) grows without bound along the run")
    if hyps.distance_dominated is False:
        failures.append("arc-length domination of the distance fails")

    if problem.forces.V is not None:
        theorem = "Thm-2.9-trajectory"
        leg = result.leg(direction)
        d = np.array(
            [
                problem.chart.chart_distance(
                    np.asarray(problem.initial_point), p
                )[0]
                for p in leg.positions
            ]
        )
        v_vals = np.array(
            [
                problem.forces.potential_at(p, t)
                for p, t in zip(leg.positions, leg.times)
            ]
        )
        # minorant V >= -(A d^2 + C): fit on -V
        a, c = _nonneg_line_fit(d**2, -v_vals)
        a *= ENVELOPE_INFLATION
        c *= ENVELOPE_INFLATION
        deficit = float(np.max(-v_vals - (a * d**2 + c)))
        if deficit > 0:
            c += deficit
        constants["minorant_A"] = a
        constants["minorant_C"] = c
        ratios = np.where(d > 1e-9, -v_vals / (1.0 + d**2), 0.0)
        witness = _series_trend_witness(leg.times, leg.positions, ratios, "-V/(1+d^2)")
        if witness is not None:
            failures.append("-V outruns every quadratic minorant along the run")
            witnesses.append(witness)
    else:
        theorem = "Thm-2.4-trajectory"

    if failures:
        verdict = "not-certified"
    else:
        verdict = "certified-heuristic" if heuristic else "certified"
    return CompletenessCertificate(
        theorem=theorem,
        direction=direction,
        constants=constants,
        assumptions=["metric completeness asserted by user"],
        verdict=verdict,
        reason="; ".join(failures) if failures else None,
        witnesses=witnesses,
    )
