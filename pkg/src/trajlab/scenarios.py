"""Built-in parameterized problems and their closed-form/quadrature oracles.

The one-dimensional power-law instances put the growth thresholds of the
completeness criteria exactly at their breaking point:

* ``ex1``: external field (1+eps) x^(1+2 eps) for x >= 1 (superlinear,
  finite-time blow-up; potential form V = -x^(2+2 eps)/2).
* ``ex2``: velocity-proportional force (1+eps) x^eps for x >= 1
  (unbounded self-adjoint part; blow-up at exactly 1/eps).
* ``ex3``: friction -|x| v (upper-bounded self-adjoint part: forward
  complete, backward blow-up at -1 from x(t) = 2/(t+1)).

The fields are prescribed for x >= 1 only; below that they are extended
by a quintic smoothstep blend on [0, 1], which keeps them globally C^2
while leaving every trajectory started at the documented initial data in
the pure power-law region.  The friction profile |x| of ex3 is blended
around the kink at 0 the same way; away from the blend the classical
smooth theory applies piecewise.

pp-waves: the 4-dimensional metric dx^2 + dy^2 + 2 du dv + H du^2 enters
either as a full pseudo-Riemannian geodesic problem or reduced to the
plane problem x''(u) = grad H / 2, i.e. a time-dependent potential
V = -H/2 with time variable u.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

from . import expressions as ex
from .expressions import Expression, Var
from .dynamics import TrajectoryProblem
from .forces import ForceSystem
from .geometry import (
    ManifoldChart,
    PSEUDO_RIEMANNIAN,
    euclidean_chart,
    hyperbolic_half_plane_chart,
    polar_chart,
)
from .quadrature import integrate_adaptive

__all__ = [
    "ScenarioError",
    "PpWaveSpec",
    "builtin",
    "scenario_names",
    "ppwave_reduce",
    "ppwave_full",
    "blowup_oracle",
    "blowup_oracle_crosscheck",
]


class ScenarioError(Exception):
    pass


def _blend_text(arg: str) -> str:
    """Quintic smoothstep of *arg* clamped to [0, 1]: 0 below 0, 1 above 1, C^2."""
    c = f"((abs({arg}) - abs({arg} - 1) + 1)/2)"
    return f"({c}^3*(10 - 15*{c} + 6*{c}^2))"


def _require_positive(params: dict, key: str, default: float) -> float:
    value = float(params.pop(key, default))
    if value <= 0.0:
        raise ScenarioError(f"parameter {key} must be positive, got {value}")
    return value


def _pop_floats(params: dict, key: str, default):
    value = params.pop(key, default)
    if value is None:
        return None
    if isinstance(value, str):
        value = value.split(",")
    return tuple(float(v) for v in value)


def _finish(params: dict, name: str, **problem_kw) -> TrajectoryProblem:
    horizon = _pop_floats(params, "horizon", problem_kw.pop("horizon"))
    position = _pop_floats(params, "position", problem_kw.pop("initial_point"))
    velocity = _pop_floats(params, "velocity", problem_kw.pop("initial_velocity"))
    if params:
        raise ScenarioError(f"unknown parameters for {name!r}: {sorted(params)}")
    return TrajectoryProblem(
        initial_point=position,
        initial_velocity=velocity,
        horizon=horizon,
        **problem_kw,
    )


def _ex1(params: dict) -> TrajectoryProblem:
    eps = _require_positive(params, "eps", 1.0)
    form = params.pop("form", "potential")
    chart = euclidean_chart(1, ("x",))
    if form == "potential":
        v_text = f"-0.5*{_blend_text('x')}*abs(x)^pexp"
        forces = ForceSystem(
            ("x",), potential=ex.parse(v_text, params={"pexp": 2.0 + 2.0 * eps})
        )
    elif form == "field":
        x_text = f"cf*{_blend_text('x')}*abs(x)^qexp"
        forces = ForceSystem(
            ("x",),
            external_field=[
                ex.parse(x_text, params={"cf": 1.0 + eps, "qexp": 1.0 + 2.0 * eps})
            ],
        )
    else:
        raise ScenarioError("ex1 form must be 'potential' or 'field'")
    return _finish(
        params,
        "ex1",
        chart=chart,
        forces=forces,
        initial_point=(1.0,),
        initial_velocity=(0.0,),
        horizon=(0.0, 10.0),
    )


def _ex2(params: dict) -> TrajectoryProblem:
    eps = _require_positive(params, "eps", 1.0)
    f_text = f"cf*{_blend_text('x')}*abs(x)^eeps"
    forces = ForceSystem(
        ("x",),
        force_matrix=[[ex.parse(f_text, params={"cf": 1.0 + eps, "eeps": eps})]],
    )
    return _finish(
        params,
        "ex2",
        chart=euclidean_chart(1, ("x",)),
        forces=forces,
        initial_point=(1.0,),
        initial_velocity=(1.0,),
        horizon=(0.0, 10.0),
    )


def _ex3(params: dict) -> TrajectoryProblem:
    f_text = f"-({_blend_text('abs(x)')}*abs(x))"
    forces = ForceSystem(("x",), force_matrix=[[f_text]])
    return _finish(
        params,
        "ex3",
        chart=euclidean_chart(1, ("x",)),
        forces=forces,
        initial_point=(2.0,),
        initial_velocity=(-2.0,),
        horizon=(-2.0, 100.0),
    )


def _linear_spring(params: dict) -> TrajectoryProblem:
    k = float(params.pop("k", 1.0))
    if k == 0.0:
        raise ScenarioError("spring constant k must be nonzero")
    forces = ForceSystem(("x",), potential=ex.parse("0.5*k*x^2", params={"k": k}))
    return _finish(
        params,
        "linear-spring",
        chart=euclidean_chart(1, ("x",)),
        forces=forces,
        initial_point=(1.0,),
        initial_velocity=(0.0,),
        horizon=(0.0, 20.0),
    )


# F = g^{-1} A with constant antisymmetric A = [[0, B], [-B, 0]], plus
# initial data giving orbits that stay in a well-conditioned chart region
# for long horizons (on the hyperbolic chart every unit-speed curve hits
# y ~ exp(-t), so the default speeds there are moderate).
_MAGNETIC_DEFAULTS = {
    "euclidean": ((("0", "B"), ("-B", "0")), (0.0, 0.0), (1.0, 0.0)),
    "polar": ((("0", "B"), ("-B/r^2", "0")), (1.0, 0.0), (0.0, 1.0)),
    "hyperbolic": ((("0", "B*y^2"), ("-B*y^2", "0")), (0.0, 1.0), (0.2, 0.0)),
}


def _chart_by_name(name: str) -> ManifoldChart:
    if name == "euclidean":
        return euclidean_chart(2)
    if name == "polar":
        return polar_chart()
    if name == "hyperbolic":
        return hyperbolic_half_plane_chart()
    raise ScenarioError(f"unknown chart {name!r} (euclidean, polar, hyperbolic)")


def _magnetic_2d(params: dict) -> TrajectoryProblem:
    b = float(params.pop("B", 1.0))
    chart_name = str(params.pop("chart", "euclidean"))
    if chart_name not in _MAGNETIC_DEFAULTS:
        raise ScenarioError(f"unknown chart {chart_name!r} for magnetic-2d")
    rows, p0, v0 = _MAGNETIC_DEFAULTS[chart_name]
    chart = _chart_by_name(chart_name)
    forces = ForceSystem(
        chart.coord_names,
        force_matrix=[
            [ex.parse(entry, allowed_names=chart.coord_names, params={"B": b})
             for entry in row]
            for row in rows
        ],
    )
    return _finish(
        params,
        "magnetic-2d",
        chart=chart,
        forces=forces,
        initial_point=p0,
        initial_velocity=v0,
        horizon=(0.0, 100.0),
    )


_GEODESIC_DEFAULTS = {
    "euclidean": ((0.0, 0.0), (1.0, 0.0)),
    "polar": ((1.0, 0.0), (0.0, 1.0)),
    "hyperbolic": ((0.0, 1.0), (0.05, 0.0)),
}


def _geodesic(params: dict) -> TrajectoryProblem:
    chart_name = str(params.pop("chart", "euclidean"))
    chart = _chart_by_name(chart_name)
    p0, v0 = _GEODESIC_DEFAULTS[chart_name]
    return _finish(
        params,
        "geodesic",
        chart=chart,
        forces=ForceSystem(chart.coord_names),
        initial_point=p0,
        initial_velocity=v0,
        horizon=(0.0, 100.0),
    )


def _bump_2d(params: dict) -> TrajectoryProblem:
    """Forces that die off outside a ball: certifiable for any direction."""
    strength = float(params.pop("strength", 1.0))
    bump = "exp(-(x^2 + y^2))"
    forces = ForceSystem(
        ("x", "y"),
        force_matrix=[
            [ex.parse(f"-s*{bump}", params={"s": strength}), ex.Const(0.0)],
            [ex.Const(0.0), ex.parse(f"-s*{bump}", params={"s": strength})],
        ],
        external_field=[
            ex.parse(f"s*y*{bump}", params={"s": strength}),
            ex.parse(f"-s*x*{bump}", params={"s": strength}),
        ],
    )
    return _finish(
        params,
        "bump-2d",
        chart=euclidean_chart(2),
        forces=forces,
        initial_point=(0.5, 0.0),
        initial_velocity=(0.0, 1.0),
        horizon=(0.0, 100.0),
    )


# -- pp-waves -------------------------------------------------------------------


@dataclass(frozen=True)
class PpWaveSpec:
    """Wave profile H(x, y, u); plane waves carry their quadratic form."""

    H: Expression
    kind: str = "generic"
    coefficients: tuple | None = None  # (f11, f22, f12) as expressions of u

    @staticmethod
    def generic(h) -> "PpWaveSpec":
        expr = h if isinstance(h, Expression) else ex.parse(
            str(h), allowed_names=("x", "y", "u")
        )
        return PpWaveSpec(H=expr, kind="generic")

    @staticmethod
    def plane_wave(f11="0", f22="0", f12="0") -> "PpWaveSpec":
        coeffs = tuple(
            c if isinstance(c, Expression) else ex.parse(str(c), allowed_names=("u",))
            for c in (f11, f22, f12)
        )
        x, y = Var("x"), Var("y")
        two = ex.Const(2.0)
        h = ex.add(
            ex.sub(
                ex.mul(coeffs[0], ex.pow_(x, two)),
                ex.mul(coeffs[1], ex.pow_(y, two)),
            ),
            ex.mul(ex.Const(2.0), ex.mul(coeffs[2], ex.mul(x, y))),
        )
        return PpWaveSpec(H=h, kind="plane", coefficients=coeffs)


def ppwave_reduce(
    spec: PpWaveSpec,
    position=(1.0, 0.0),
    velocity=(0.0, 0.0),
    u_span=(0.0, 50.0),
    u_start: float | None = None,
) -> TrajectoryProblem:
    """Plane problem x''(u) = grad H(x, u) / 2 as potential V = -H/2.

    The wave coordinate u becomes the time variable of the reduced
    problem (reported under the label 'u').
    """
    h_of_t = ex.substitute(spec.H, {"u": Var("t")})
    potential = ex.mul(ex.Const(-0.5), h_of_t)
    forces = ForceSystem(("x", "y"), potential=potential)
    start = u_span[0] if u_start is None else float(u_start)
    return TrajectoryProblem(
        chart=euclidean_chart(2),
        forces=forces,
        initial_point=position,
        initial_velocity=velocity,
        initial_time=start,
        horizon=tuple(u_span),
        time_label="u",
    )


def ppwave_full(
    spec: PpWaveSpec,
    initial_position=(1.0, 0.0, 0.0, 0.0),
    initial_velocity=(0.0, 0.0, 1.0, 0.0),
    span=(0.0, 50.0),
    check_reduction: bool = False,
) -> TrajectoryProblem:
    """Geodesic problem on the 4-dimensional wave chart (x, y, u, v).

    With check_reduction the initial u-velocity must be nonzero so the
    solution can be reparameterized by u and compared against the
    reduced plane problem (u is affine along these geodesics).
    """
    if check_reduction and float(initial_velocity[2]) == 0.0:
        raise ScenarioError("reduction cross-check needs nonzero initial u-velocity")
    zero, one = ex.Const(0.0), ex.Const(1.0)
    metric = [
        [one, zero, zero, zero],
        [zero, one, zero, zero],
        [zero, zero, spec.H, one],
        [zero, zero, one, zero],
    ]
    chart = ManifoldChart(
        ("x", "y", "u", "v"),
        metric,
        signature=PSEUDO_RIEMANNIAN,
    )
    return TrajectoryProblem(
        chart=chart,
        forces=ForceSystem(chart.coord_names),
        initial_point=initial_position,
        initial_velocity=initial_velocity,
        initial_time=span[0],
        horizon=tuple(span),
    )


def _planewave(params: dict) -> TrajectoryProblem:
    f11 = str(params.pop("f11", "0"))
    f22 = str(params.pop("f22", "0"))
    f12 = str(params.pop("f12", "0"))
    spec = PpWaveSpec.plane_wave(f11, f22, f12)
    horizon = _pop_floats(params, "horizon", (0.0, 50.0))
    position = _pop_floats(params, "position", (1.0, 0.0))
    velocity = _pop_floats(params, "velocity", (0.0, 0.0))
    if params:
        raise ScenarioError(f"unknown parameters for 'planewave': {sorted(params)}")
    return ppwave_reduce(spec, position=position, velocity=velocity, u_span=horizon)


def _ppwave(params: dict) -> TrajectoryProblem:
    h_text = params.pop("H", None)
    if h_text is None:
        raise ScenarioError("ppwave needs an H=<expression in x,y,u> parameter")
    spec = PpWaveSpec.generic(str(h_text))
    horizon = _pop_floats(params, "horizon", (0.0, 50.0))
    position = _pop_floats(params, "position", (1.0, 0.0))
    velocity = _pop_floats(params, "velocity", (0.0, 0.0))
    if params:
        raise ScenarioError(f"unknown parameters for 'ppwave': {sorted(params)}")
    return ppwave_reduce(spec, position=position, velocity=velocity, u_span=horizon)


_BUILDERS = {
    "ex1": _ex1,
    "ex2": _ex2,
    "ex3": _ex3,
    "linear-spring": _linear_spring,
    "magnetic-2d": _magnetic_2d,
    "geodesic": _geodesic,
    "planewave": _planewave,
    "ppwave": _ppwave,
    "bump-2d": _bump_2d,
}


def scenario_names() -> tuple:
    return tuple(sorted(_BUILDERS))


def builtin(name: str, params: dict | None = None, **kw) -> TrajectoryProblem:
    """Assemble a built-in problem; parameters are validated per scenario."""
    if name not in _BUILDERS:
        raise ScenarioError(f"unknown scenario {name!r}; known: {scenario_names()}")
    merged = dict(params or {})
    merged.update(kw)
    return _BUILDERS[name](merged)


# -- blow-up oracles --------------------------------------------------------------


def blowup_oracle(kind: str, eps: float) -> float:
    """Exact blow-up time of the power-law instances.

    ex2 has the closed form 1/eps.  ex1 is the improper integral of
    1/sqrt(sigma^(2(1+eps)) - 1) from 1, computed by adaptive
    Gauss-Kronrod after removing the endpoint singularity with
    sigma = 1 + s^2 on [1, 2] and compactifying the tail with
    w = sigma^(-eps).
    """
    eps = float(eps)
    if eps <= 0.0:
        raise ScenarioError("eps must be positive")
    if kind == "ex2":
        return 1.0 / eps
    if kind != "ex1":
        raise ScenarioError(f"unknown oracle kind {kind!r} (ex1, ex2)")

    two_eps = 2.0 * (1.0 + eps)

    def head(s: float) -> float:
        sigma = 1.0 + s * s
        return 2.0 * s / math.sqrt(sigma**two_eps - 1.0)

    def tail(w: float) -> float:
        return 1.0 / (eps * math.sqrt(1.0 - w ** (two_eps / eps)))

    head_part = integrate_adaptive(head, 0.0, 1.0, rel_tol=1e-12)
    tail_part = integrate_adaptive(tail, 0.0, 2.0**-eps, rel_tol=1e-12)
    return head_part + tail_part


def blowup_oracle_crosscheck(eps: float) -> float:
    """Independent route for the ex1 integral via sigma -> 1/sigma.

    The inversion maps the integral to (1/eps) int_0^1 dz /
    sqrt(1 - z^beta) with beta = 2(1+eps)/eps; the endpoint is
    regularised by z = 1 - s^2.
    """
    eps = float(eps)
    if eps <= 0.0:
        raise ScenarioError("eps must be positive")
    beta = 2.0 * (1.0 + eps) / eps

    def integrand(s: float) -> float:
        z = 1.0 - s * s
        return 2.0 * s / (eps * math.sqrt(1.0 - z**beta))

    return integrate_adaptive(integrand, 0.0, 1.0, rel_tol=1e-12)
