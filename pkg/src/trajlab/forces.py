"""Velocity-coupled force tensor F, external field X and potential V.

A ForceSystem evaluates the right-hand side ingredients of the trajectory
equation: the (1,1) tensor F(p, t) acting on velocities, and either an
explicit external field X(p, t) or a potential V(p, t) whose metric
gradient replaces X with -grad V.  Storing only one of X / V keeps the
two formulations on a single evaluation path.

The time derivative of V is exposed separately and never enters the
force; it only feeds the growth checks of the analysis module.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import expressions as ex
from .expressions import Expression
from .geometry import ManifoldChart

__all__ = ["ForceSystemError", "ForceSystem"]


class ForceSystemError(Exception):
    pass


def _parse_entry(entry, names: Sequence[str]) -> Expression:
    if isinstance(entry, Expression):
        return entry
    if isinstance(entry, (int, float)):
        return ex.Const(float(entry))
    return ex.parse(str(entry), allowed_names=names)


class ForceSystem:
    """Immutable container for F, X, V over a chart's coordinates."""

    def __init__(
        self,
        coord_names: Sequence[str],
        force_matrix=None,
        external_field=None,
        potential=None,
    ):
        self.coord_names = tuple(coord_names)
        self.dim = len(self.coord_names)
        names = list(self.coord_names) + ["t"]

        if external_field is not None and potential is not None:
            raise ForceSystemError("set at most one of external_field and potential")

        self.F = None
        if force_matrix is not None:
            rows = [[_parse_entry(e, names) for e in row] for row in force_matrix]
            if len(rows) != self.dim or any(len(r) != self.dim for r in rows):
                raise ForceSystemError(f"force matrix must be {self.dim}x{self.dim}")
            self.F = tuple(tuple(row) for row in rows)

        self.X = None
        if external_field is not None:
            comps = [_parse_entry(e, names) for e in external_field]
            if len(comps) != self.dim:
                raise ForceSystemError(f"external field must have {self.dim} components")
            self.X = tuple(comps)

        self.V = _parse_entry(potential, names) if potential is not None else None

        used = set()
        for e in self._all_expressions():
            used |= e.free_variables()
        extra = used - set(names)
        if extra:
            raise ForceSystemError(f"force expressions use unknown names {sorted(extra)}")
        self.autonomous = "t" not in used
        self.force_tensor_autonomous = self.F is None or not any(
            "t" in e.free_variables() for row in self.F for e in row
        )

        self._F_fns = (
            [[ex.compile_expression(e, names) for e in row] for row in self.F]
            if self.F is not None
            else None
        )
        self._X_fns = (
            [ex.compile_expression(e, names) for e in self.X]
            if self.X is not None
            else None
        )
        if self.V is not None:
            self.dV_dx = tuple(ex.differentiate(self.V, c) for c in self.coord_names)
            self.dV_dt = ex.differentiate(self.V, "t")
            self._V_fn = ex.compile_expression(self.V, names)
            self._dV_dx_fns = [ex.compile_expression(e, names) for e in self.dV_dx]
            self._dV_dt_fn = ex.compile_expression(self.dV_dt, names)
        else:
            self.dV_dx = None
            self.dV_dt = None

    def _all_expressions(self):
        if self.F is not None:
            for row in self.F:
                yield from row
        if self.X is not None:
            yield from self.X
        if self.V is not None:
            yield self.V

    # -- raw evaluation ----------------------------------------------------

    def force_matrix_at(self, p, t: float) -> np.ndarray | None:
        if self.F is None:
            return None
        args = list(np.asarray(p, dtype=float)) + [t]
        return np.array([[fn(*args) for fn in row] for row in self._F_fns])

    def potential_at(self, p, t: float) -> float:
        if self.V is None:
            raise ForceSystemError("no potential set")
        args = list(np.asarray(p, dtype=float)) + [t]
        return self._V_fn(*args)

    def potential_time_derivative_at(self, p, t: float) -> float:
        """dV/dt at (p, t); zero when no potential is set."""
        if self.V is None:
            return 0.0
        args = list(np.asarray(p, dtype=float)) + [t]
        return self._dV_dt_fn(*args)

    # -- derived quantities --------------------------------------------------

    def gradient_field(self, chart: ManifoldChart, p, t: float) -> np.ndarray:
        """Metric gradient of V: g^{-1}(p) dV/dx at (p, t).

        Never includes the time derivative of V.
        """
        if self.V is None:
            raise ForceSystemError("gradient_field requires a potential")
        args = list(np.asarray(p, dtype=float)) + [t]
        dv = np.array([fn(*args) for fn in self._dV_dx_fns])
        return np.linalg.solve(chart.metric_at(p), dv)

    def external_at(self, chart: ManifoldChart, p, t: float) -> np.ndarray:
        """Effective external field: X, or -grad V when V is set."""
        if self.X is not None:
            args = list(np.asarray(p, dtype=float)) + [t]
            return np.array([fn(*args) for fn in self._X_fns])
        if self.V is not None:
            return -self.gradient_field(chart, p, t)
        return np.zeros(self.dim)

    def eval_force(self, chart: ManifoldChart, p, v, t: float) -> np.ndarray:
        """F(p,t) v + X(p,t), with X replaced by -grad V when V is set."""
        out = self.external_at(chart, p, t)
        f = self.force_matrix_at(p, t)
        if f is not None:
            out = out + f @ np.asarray(v, dtype=float)
        return out

    def decompose(self, chart: ManifoldChart, p, t: float):
        """Split F into its metric self-adjoint and skew-adjoint parts.

        S = (F + g^{-1} F^T g) / 2 and H = F - S, so g S is symmetric and
        g H antisymmetric.
        """
        f = self.force_matrix_at(p, t)
        if f is None:
            raise ForceSystemError("decompose requires a force matrix")
        g = chart.metric_at(p)
        s = 0.5 * (f + np.linalg.solve(g, f.T @ g))
        return s, f - s

    def self_adjoint_quadratic(self, chart: ManifoldChart, p, v, t: float) -> float:
        """g(v, S v), computed as g(v, F v) (the skew part drops out)."""
        f = self.force_matrix_at(p, t)
        if f is None:
            return 0.0
        g = chart.metric_at(p)
        v = np.asarray(v, dtype=float)
        return float(v @ g @ (f @ v))
