"""Per-step safety filter: tracking objective, slacked stability, hard safety.

Each control step solves

    min_{u, slack}  u'Hu + F(x)u + rho * slack^2
    s.t.            L_f V + L_g V u <= -sigma V + slack      (stability, slacked)
                    cbf_row(x) . u  >= cbf_offset(x)         (safety, hard)

Only the stability constraint carries the slack, so tracking degrades before
safety ever does. The control is held constant (zero-order hold) for one
control period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .adaptive import AdrcbfChain, evaluate_with_clamping
from .fields import ControlAffineSystem, SmoothScalarField, as_state
from .qp import QpProblem, QpSolution, solve_qp
from .robust import (
    AffineControlConstraint,
    ChainEvaluation,
    DrcbfChain,
    HocbfChain,
    _checked_constraint,
    _dot,
    _row_times_matrix,
)

__all__ = [
    "ControllerError",
    "ClfSpec",
    "ControllerSpec",
    "ControlStepResult",
    "clf_constraint",
    "control_step",
]

DEFAULT_CONTROL_PERIOD = 1e-3

MODES = ("hocbf", "drcbf", "adrcbf")


class ControllerError(ValueError):
    """Invalid controller specification."""


@dataclass(frozen=True)
class ClfSpec:
    """Tracking Lyapunov function with decay rate sigma and slack weight rho."""

    V: SmoothScalarField
    sigma: float
    slack_weight: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ControllerError("sigma must be strictly positive")
        if not self.slack_weight > 0.0:
            raise ControllerError("slack weight must be strictly positive")


@dataclass(frozen=True)
class ControllerSpec:
    """Mode, safety cascade, stability spec, and quadratic tracking cost.

    objective_h is the symmetric positive-definite H of u'Hu; objective_f
    maps the state to the linear cost row F(x) (a constant row is also
    accepted). control_period is the zero-order-hold duration in seconds.
    """

    mode: str
    chain: object
    clf: ClfSpec
    objective_h: tuple
    objective_f: Callable
    control_period: float = DEFAULT_CONTROL_PERIOD

    def __post_init__(self):
        if self.mode not in MODES:
            raise ControllerError(f"unknown controller mode {self.mode!r}")
        if not self.control_period > 0.0:
            raise ControllerError("control period must be strictly positive")
        h = tuple(tuple(float(v) for v in row) for row in self.objective_h)
        object.__setattr__(self, "objective_h", h)
        p = len(h)
        for row in h:
            if len(row) != p:
                raise ControllerError("objective H must be square")
        for i in range(p):
            for j in range(p):
                if abs(h[i][j] - h[j][i]) > 1e-12 * max(abs(h[i][j]), 1.0):
                    raise ControllerError("objective H must be symmetric")
        if not callable(self.objective_f):
            row = tuple(float(v) for v in self.objective_f)
            object.__setattr__(self, "objective_f", lambda xs: row)
        quad = [tuple(2.0 * h[i][j] for j in range(p)) + (0.0,) for i in range(p)]
        quad.append((0.0,) * p + (2.0 * self.clf.slack_weight,))
        object.__setattr__(self, "_qp_quadratic", tuple(quad))

    @property
    def system(self) -> ControlAffineSystem:
        return self.chain.system


@dataclass(frozen=True)
class ControlStepResult:
    """QP outcome for one step plus everything the trajectory log audits."""

    u: tuple
    slack: float
    qp_status: str
    cbf_residual: float
    clf_residual: float
    phi: tuple
    guard_events: tuple
    cbf_constraint: AffineControlConstraint
    clf_row: tuple
    clf_offset: float


def clf_constraint(clf: ClfSpec, system: ControlAffineSystem, x) -> AffineControlConstraint:
    """Stability row over (u, slack):  L_g V . u - slack <= -sigma V - L_f V."""
    xs = as_state(x, system.n)
    value, grad = clf.V._jet(xs)
    lfv = _dot(grad, system.f(xs))
    lgv = _row_times_matrix(grad, system.g(xs), system.n, system.p)
    row = (*lgv, -1.0)
    offset = -clf.sigma * value - lfv
    return AffineControlConstraint(row=row, offset=offset, sense="<=")


def _cbf_constraint_for_mode(spec: ControllerSpec, x):
    """Constraint plus the cascade evaluation and any guard events."""
    chain = spec.chain
    if spec.mode == "adrcbf":
        ev, constraint, events = evaluate_with_clamping(chain, x)
        return constraint, ev, events
    ev = chain.evaluate(x)
    if spec.mode == "drcbf":
        offset = chain.k[-1] * chain.disturbance_bound ** 2 - ev.top_drift
    else:
        offset = -ev.top_drift
    for c, value in zip(chain.coeffs.row(chain.m), ev.levels):
        offset -= c * value
    return _checked_constraint(ev.control_row, offset, x), ev, ()


def control_step(spec: ControllerSpec, x, t: float) -> ControlStepResult:
    """Solve the per-step safety-filtered tracking problem at state x, time t.

    The safety row is hard; the stability row is slacked. A non-optimal QP
    status is reported, not raised, so the simulation loop can abort with the
    partial log. The result is a pure function of (spec, x, t).
    """
    system = spec.system
    xs = as_state(x, system.n)
    p = system.p

    cbf, ev, guard_events = _cbf_constraint_for_mode(spec, xs)
    clf_row_con = clf_constraint(spec.clf, system, xs)

    # Decision vector z = (u, slack).
    dim = p + 1
    q_rows = spec._qp_quadratic
    f_row = spec.objective_f(xs)
    c_vec = tuple(float(v) for v in f_row) + (0.0,)
    if len(c_vec) != dim:
        raise ControllerError(
            f"objective F(x) returned {len(c_vec) - 1} entries, expected {p}"
        )

    # Both rows normalized to <= sense: the safety row flips sign.
    a_rows = (clf_row_con.row, tuple(-v for v in cbf.row) + (0.0,))
    b_vec = (clf_row_con.offset, -cbf.offset)
    solution = solve_qp(QpProblem(Q=q_rows, c=c_vec, A=a_rows, b=b_vec))

    if solution.status != "optimal":
        return ControlStepResult(
            u=(),
            slack=math.nan,
            qp_status=solution.status,
            cbf_residual=math.nan,
            clf_residual=math.nan,
            phi=ev.phi,
            guard_events=guard_events,
            cbf_constraint=cbf,
            clf_row=clf_row_con.row,
            clf_offset=clf_row_con.offset,
        )

    u = solution.z[:p]
    slack = solution.z[p]
    cbf_residual = _dot(cbf.row, u) - cbf.offset
    clf_value = _dot(clf_row_con.row[:p], u) - slack
    clf_residual = clf_row_con.offset - clf_value
    return ControlStepResult(
        u=u,
        slack=slack,
        qp_status="optimal",
        cbf_residual=cbf_residual,
        clf_residual=clf_residual,
        phi=ev.phi,
        guard_events=guard_events,
        cbf_constraint=cbf,
        clf_row=clf_row_con.row,
        clf_offset=clf_row_con.offset,
    )
