"""Embedded Dormand-Prince 5(4) pair with dense output and PI step control.

Fifth-order propagation with a fourth-order error estimate (FSAL, seven
stages) and the classic quartic continuous extension, so event times can
be located to full accuracy inside accepted steps.  The controller is the
standard PI limiter: step factors are kept inside [0.1, 5] around the
0.9-safety optimum with a 0.04 error-memory exponent.

This module is deliberately generic (any f(t, y) -> array); trajectory
semantics such as blow-up classification live in ``dynamics``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["DenseSegment", "DormandPrince", "StepCollapse", "solve", "DenseSolution"]

# Butcher tableau (Dormand & Prince 1980).
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
# Error coefficients: 5th-order weights minus the embedded 4th-order ones.
_E = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)
# Quartic dense-output weights.
_D = (
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
)

_SAFETY = 0.9
_BETA = 0.04
_EXPO1 = 0.2 - _BETA * 0.75
_FAC_MIN = 0.1  # smallest h_new / h
_FAC_MAX = 5.0  # largest h_new / h


class StepCollapse(Exception):
    """Step size fell below the floor without meeting the error target."""

    def __init__(self, t: float, h: float, reason: str):
        super().__init__(f"step collapse at t={t!r} (h={h:.3e}): {reason}")
        self.t = t
        self.h = h
        self.reason = reason


@dataclass(frozen=True)
class DenseSegment:
    """Continuous extension over one accepted step [t0, t0 + h]."""

    t0: float
    h: float
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray
    r5: np.ndarray

    def __call__(self, t: float) -> np.ndarray:
        theta = (t - self.t0) / self.h
        theta1 = 1.0 - theta
        return self.r1 + theta * (
            self.r2 + theta1 * (self.r3 + theta * (self.r4 + theta1 * self.r5))
        )

    @property
    def t1(self) -> float:
        return self.t0 + self.h


class DormandPrince:
    """Single-direction adaptive stepper (t increases).

    ``step(t_limit)`` advances by one accepted step, never beyond
    t_limit, and returns the dense segment for the step.  Right-hand-side
    failures (exceptions or non-finite output) shrink the step; if the
    step size collapses below ``h_floor(t)`` a StepCollapse is raised.
    """

    def __init__(
        self,
        f: Callable[[float, np.ndarray], np.ndarray],
        t0: float,
        y0: Sequence[float],
        rtol: float,
        atol: float,
        h_floor: Callable[[float], float] | None = None,
    ):
        self.f = f
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=float).copy()
        self.rtol = rtol
        self.atol = atol
        self.h_floor = h_floor or (lambda t: 1e-14 * max(1.0, abs(t)))
        self.k1 = self._eval(self.t, self.y)
        if self.k1 is None:
            raise StepCollapse(self.t, 0.0, "right-hand side failed at initial state")
        self.h_next: float | None = None
        self._facold = 1e-4
        self.n_accepted = 0
        self.n_rejected = 0

    def _eval(self, t: float, y: np.ndarray) -> np.ndarray | None:
        try:
            out = np.asarray(self.f(t, y), dtype=float)
        except (ArithmeticError, ValueError):
            return None
        if not np.all(np.isfinite(out)):
            return None
        return out

    def _initial_step(self, t_limit: float) -> float:
        span = t_limit - self.t
        sc = self.atol + self.rtol * np.abs(self.y)
        d0 = math.sqrt(float(np.mean((self.y / sc) ** 2)))
        d1 = math.sqrt(float(np.mean((self.k1 / sc) ** 2)))
        h = 1e-6 if d1 <= 1e-10 or d0 <= 1e-10 else 0.01 * d0 / d1
        h = min(h, span)
        f1 = self._eval(self.t + h, self.y + h * self.k1)
        while f1 is None and h > self.h_floor(self.t):
            h *= 0.1
            f1 = self._eval(self.t + h, self.y + h * self.k1)
        if f1 is None:
            return min(1e-6, span)
        d2 = math.sqrt(float(np.mean(((f1 - self.k1) / sc) ** 2))) / h
        dm = max(d1, d2)
        h1 = (0.01 / dm) ** 0.2 if dm > 1e-15 else max(1e-6, h * 1e3)
        return min(100.0 * h, h1, span)

    def step(self, t_limit: float) -> DenseSegment:
        if t_limit <= self.t:
            raise ValueError("t_limit must lie ahead of the current time")
        h = self.h_next if self.h_next is not None else self._initial_step(t_limit)
        ks = [self.k1] + [None] * 6
        while True:
            h = min(h, t_limit - self.t)
            floor = self.h_floor(self.t)
            if h < floor:
                raise StepCollapse(self.t, h, self._last_reason)
            failed = False
            for i in range(1, 7):
                yi = self.y + h * sum(
                    a * ks[j] for j, a in enumerate(_A[i]) if a != 0.0
                )
                ks[i] = self._eval(self.t + _C[i] * h, yi)
                if ks[i] is None:
                    failed = True
                    break
            if failed:
                self._last_reason = "non-finite right-hand side"
                self.n_rejected += 1
                h *= 0.1
                continue
            y_new = yi  # stage 7 point equals the 5th-order solution (FSAL)
            err_vec = h * sum(e * ks[i] for i, e in enumerate(_E) if e != 0.0)
            sc = self.atol + self.rtol * np.maximum(np.abs(self.y), np.abs(y_new))
            err = math.sqrt(float(np.mean((err_vec / sc) ** 2)))
            if err <= 1.0:
                break
            self._last_reason = "local error above tolerance"
            self.n_rejected += 1
            fac11 = err**_EXPO1
            h = h / min(1.0 / _FAC_MIN, fac11 / _SAFETY)

        # accepted
        fac11 = err**_EXPO1 if err > 0.0 else 0.0
        fac = fac11 / (self._facold**_BETA) if err > 0.0 else 1.0 / _FAC_MAX
        fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac / _SAFETY))
        self.h_next = h / fac
        self._facold = max(err, 1e-4)

        k7 = ks[6]
        y_old = self.y
        ydiff = y_new - y_old
        bspl = h * ks[0] - ydiff
        r5 = h * sum(d * ks[i] for i, d in enumerate(_D) if d != 0.0)
        segment = DenseSegment(
            self.t, h, y_old, ydiff, bspl, ydiff - h * k7 - bspl, r5
        )
        self.t = self.t + h
        self.y = y_new
        self.k1 = k7
        self.n_accepted += 1
        return segment

    _last_reason = "local error above tolerance"


class DenseSolution:
    """Piecewise dense output over consecutive accepted steps."""

    def __init__(self, segments: list[DenseSegment]):
        if not segments:
            raise ValueError("no segments")
        self.segments = segments
        self._starts = [s.t0 for s in segments]
        self.t0 = segments[0].t0
        self.t1 = segments[-1].t1

    def __call__(self, t: float) -> np.ndarray:
        i = bisect.bisect_right(self._starts, t) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segments[i](t)


def solve(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: Sequence[float],
    t_end: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_steps: int = 1_000_000,
) -> tuple[np.ndarray, np.ndarray, DenseSolution]:
    """Integrate to t_end; returns (times, states, dense solution).

    Utility driver for well-behaved systems (comparison lemmas, oracle
    integrations); raises StepCollapse when the tolerance cannot be met.
    """
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    stepper = DormandPrince(f, t0, y0, rtol, atol)
    ts = [stepper.t]
    ys = [stepper.y.copy()]
    segments = []
    for _ in range(max_steps):
        segments.append(stepper.step(t_end))
        ts.append(stepper.t)
        ys.append(stepper.y.copy())
        if stepper.t >= t_end - 1e-14 * max(1.0, abs(t_end)):
            return np.array(ts), np.array(ys), DenseSolution(segments)
    raise StepCollapse(stepper.t, 0.0, "step budget exhausted")
