"""Single global chart: metric evaluation, Christoffel symbols, distances.

A chart holds a symmetric matrix of coordinate expressions for the metric
(time independent).  All derived quantities (metric derivatives, inverse,
Christoffel symbols) come from exact symbolic derivatives of the entries,
so downstream consumers see no differencing noise.

Distances: for charts whose Christoffel symbols vanish (checked on a
sample grid) the straight chart segment is a minimising geodesic and its
metric length is returned as exact.  Otherwise the segment length is only
an upper bound for the true distance and is flagged as such; growth
checks built on it are heuristic.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Sequence

import numpy as np

from . import expressions as ex
from .expressions import Const, Expression

__all__ = [
    "GeometryError",
    "DegenerateMetricError",
    "SignatureError",
    "ManifoldChart",
    "euclidean_chart",
    "polar_chart",
    "hyperbolic_half_plane_chart",
    "symbolic_inverse",
    "RIEMANNIAN",
    "PSEUDO_RIEMANNIAN",
]

RIEMANNIAN = "riemannian"
PSEUDO_RIEMANNIAN = "pseudo-riemannian"

DEGENERACY_THRESHOLD = 1e-12
FLATNESS_TOLERANCE = 1e-12

# Gauss-Legendre rule for segment lengths on non-constant metrics.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class GeometryError(Exception):
    pass


class DegenerateMetricError(GeometryError):
    def __init__(self, point, det):
        super().__init__(
            f"metric degenerate at {np.asarray(point).tolist()} (det={det:.3e})"
        )
        self.point = np.asarray(point, dtype=float)
        self.det = det


class SignatureError(GeometryError):
    pass


def _as_expression(entry, coord_names: Sequence[str]) -> Expression:
    if isinstance(entry, Expression):
        return entry
    if isinstance(entry, (int, float)):
        return Const(float(entry))
    return ex.parse(str(entry), allowed_names=coord_names)


class ManifoldChart:
    """Global coordinate chart with a symbolic metric.

    Immutable after construction; every method is a pure function of its
    arguments, so instances are safe to share between threads.
    """

    def __init__(
        self,
        coord_names: Sequence[str],
        metric: Sequence[Sequence],
        signature: str = RIEMANNIAN,
        sample_box: Sequence[tuple[float, float]] | None = None,
    ):
        self.coord_names = tuple(coord_names)
        self.dim = len(self.coord_names)
        if self.dim == 0:
            raise GeometryError("chart needs at least one coordinate")
        if len(set(self.coord_names)) != self.dim or "t" in self.coord_names:
            raise GeometryError("coordinate names must be unique and distinct from 't'")
        if signature not in (RIEMANNIAN, PSEUDO_RIEMANNIAN):
            raise GeometryError(f"unknown signature {signature!r}")
        self.signature = signature

        rows = [
            [_as_expression(entry, self.coord_names) for entry in row] for row in metric
        ]
        if len(rows) != self.dim or any(len(r) != self.dim for r in rows):
            raise GeometryError(f"metric must be {self.dim}x{self.dim}")
        for i in range(self.dim):
            for j in range(i):
                if rows[i][j] != rows[j][i]:
                    raise GeometryError(
                        f"metric entries ({i},{j}) and ({j},{i}) differ symbolically"
                    )
        for row in rows:
            for entry in row:
                extra = entry.free_variables() - set(self.coord_names)
                if extra:
                    raise GeometryError(
                        f"metric entry {entry} uses non-coordinate names {sorted(extra)}"
                    )
        self.metric = tuple(tuple(row) for row in rows)

        if sample_box is None:
            sample_box = [(-2.0, 2.0)] * self.dim
        self.sample_box = tuple((float(a), float(b)) for a, b in sample_box)
        if len(self.sample_box) != self.dim:
            raise GeometryError("sample_box length must match dimension")

        names = list(self.coord_names)
        self._metric_fns = [
            [ex.compile_expression(e, names) for e in row] for row in self.metric
        ]
        # dmetric[k][i][j] = d g_ij / d coord_k
        self._dmetric = [
            [[ex.differentiate(e, c) for e in row] for row in self.metric]
            for c in self.coord_names
        ]
        self._dmetric_fns = [
            [[ex.compile_expression(e, names) for e in row] for row in block]
            for block in self._dmetric
        ]
        self._christoffel_trivial = all(
            isinstance(e, Const) and e.value == 0.0
            for block in self._dmetric
            for row in block
            for e in row
        )
        self._constant_metric = all(
            isinstance(e, Const) for row in self.metric for e in row
        )
        self._is_flat: bool | None = True if self._christoffel_trivial else None

        if self.signature == RIEMANNIAN:
            self._check_positive_definite_on_samples()

    # -- construction-time validation ------------------------------------

    def _sample_points(self) -> Iterable[np.ndarray]:
        axes = []
        for lo, hi in self.sample_box:
            mid = 0.5 * (lo + hi)
            axes.append((lo + 0.05 * (hi - lo), mid, hi - 0.05 * (hi - lo)))
        return (np.array(p) for p in itertools.product(*axes))

    def _check_positive_definite_on_samples(self):
        for p in self._sample_points():
            try:
                g = self.metric_at(p)
            except (ex.EvaluationError, DegenerateMetricError):
                continue
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                raise GeometryError(
                    f"metric not positive definite at sample point {p.tolist()}"
                ) from None

    # -- evaluation -------------------------------------------------------

    def metric_at(self, p) -> np.ndarray:
        """Metric matrix at point *p*; raises DegenerateMetricError."""
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,):
            raise GeometryError(f"point must have {self.dim} coordinates")
        vals = p.tolist()
        g = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            for j in range(i + 1):
                g[i, j] = g[j, i] = self._metric_fns[i][j](*vals)
        det = float(np.linalg.det(g))
        if not abs(det) > DEGENERACY_THRESHOLD:
            raise DegenerateMetricError(p, det)
        return g

    def inverse_metric_at(self, p) -> np.ndarray:
        return np.linalg.inv(self.metric_at(p))

    def metric_derivatives_at(self, p) -> np.ndarray:
        """Array D[k, i, j] = d g_ij / d coord_k at *p*."""
        vals = np.asarray(p, dtype=float).tolist()
        d = np.empty((self.dim, self.dim, self.dim))
        for k in range(self.dim):
            fns = self._dmetric_fns[k]
            for i in range(self.dim):
                for j in range(i + 1):
                    d[k, i, j] = d[k, j, i] = fns[i][j](*vals)
        return d

    def christoffel(self, p) -> np.ndarray:
        """Christoffel symbols Gamma[i, j, k] of the Levi-Civita connection."""
        if self._christoffel_trivial:
            return np.zeros((self.dim,) * 3)
        g_inv = self.inverse_metric_at(p)
        d = self.metric_derivatives_at(p)
        # term[l, j, k] = d_j g_lk + d_k g_lj - d_l g_jk
        term = (
            np.einsum("jlk->ljk", d) + np.einsum("klj->ljk", d) - d
        )
        gamma = 0.5 * np.einsum("il,ljk->ijk", g_inv, term)
        if not np.all(np.isfinite(gamma)):
            raise GeometryError(f"non-finite Christoffel symbols at {p}")
        return gamma

    def speed_squared(self, p, v) -> float:
        """g_p(v, v); may be negative on pseudo-Riemannian charts."""
        g = self.metric_at(p)
        v = np.asarray(v, dtype=float)
        return float(v @ g @ v)

    # -- distances ----------------------------------------------------------

    @property
    def is_flat(self) -> bool:
        """True when Christoffel symbols vanish on the sample grid."""
        if self._is_flat is None:
            flat = True
            for p in self._sample_points():
                try:
                    gamma = self.christoffel(p)
                except (ex.EvaluationError, GeometryError):
                    flat = False
                    break
                if np.max(np.abs(gamma)) > FLATNESS_TOLERANCE:
                    flat = False
                    break
            self._is_flat = flat
        return self._is_flat

    @property
    def distance_mode(self) -> str:
        return "exact-flat" if self.is_flat else "chord-upper-bound"

    def chart_distance(self, p, q) -> tuple[float, bool]:
        """Metric length of the straight chart segment from p to q.

        Returns (value, exact).  Exact when the chart is flat (the
        segment is then a minimising geodesic); otherwise the value is an
        upper bound for the true distance.
        """
        if self.signature != RIEMANNIAN:
            raise SignatureError("chart distance requires a Riemannian chart")
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        delta = q - p
        if not delta.any():
            return 0.0, True
        if self._constant_metric:
            g = self.metric_at(p)
            return float(math.sqrt(delta @ g @ delta)), self.is_flat
        total = 0.0
        for s, w in zip(_GL_NODES, _GL_WEIGHTS):
            g = self.metric_at(p + s * delta)
            total += w * math.sqrt(max(float(delta @ g @ delta), 0.0))
        return total, self.is_flat


# ---------------------------------------------------------------------------
# Built-in charts.


def euclidean_chart(dim: int, coord_names: Sequence[str] | None = None) -> ManifoldChart:
    if coord_names is None:
        coord_names = ("x", "y", "z", "w")[:dim] if dim <= 4 else tuple(
            f"x{i+1}" for i in range(dim)
        )
    eye = [[Const(1.0) if i == j else Const(0.0) for j in range(dim)] for i in range(dim)]
    return ManifoldChart(coord_names, eye)


def polar_chart() -> ManifoldChart:
    """Plane in polar coordinates (r, theta): g = dr^2 + r^2 dtheta^2."""
    return ManifoldChart(
        ("r", "theta"),
        [["1", "0"], ["0", "r^2"]],
        sample_box=[(0.5, 3.0), (-3.0, 3.0)],
    )


def hyperbolic_half_plane_chart() -> ManifoldChart:
    """Upper half plane with g = (dx^2 + dy^2) / y^2."""
    return ManifoldChart(
        ("x", "y"),
        [["1/y^2", "0"], ["0", "1/y^2"]],
        sample_box=[(-2.0, 2.0), (0.5, 3.0)],
    )


def hyperbolic_distance(p, q) -> float:
    """Closed-form distance on the upper half plane (test oracle)."""
    (x1, y1), (x2, y2) = p, q
    arg = 1.0 + ((x2 - x1) ** 2 + (y2 - y1) ** 2) / (2.0 * y1 * y2)
    return math.acosh(arg)


# ---------------------------------------------------------------------------
# Symbolic matrix algebra on expression entries (small dimensions).


def _sym_det(entries: Sequence[Sequence[Expression]]) -> Expression:
    n = len(entries)
    if n == 1:
        return entries[0][0]
    total: Expression | None = None
    for j in range(n):
        minor = [
            [entries[i][k] for k in range(n) if k != j] for i in range(1, n)
        ]
        term = ex.mul(entries[0][j], _sym_det(minor))
        if j % 2 == 1:
            term = ex.neg(term)
        total = term if total is None else ex.add(total, term)
    return total


def symbolic_inverse(entries: Sequence[Sequence[Expression]]) -> list[list[Expression]]:
    """Inverse of a small symbolic matrix via the adjugate formula."""
    n = len(entries)
    det = _sym_det(entries)
    if n == 1:
        return [[ex.div(Const(1.0), det)]]
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [
                [entries[r][c] for c in range(n) if c != i]
                for r in range(n)
                if r != j
            ]
            cof = _sym_det(minor)
            if (i + j) % 2 == 1:
                cof = ex.neg(cof)
            inv[i][j] = ex.div(cof, det)
    return inv
