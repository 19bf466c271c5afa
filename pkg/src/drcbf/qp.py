"""Exact solver for small strictly convex quadratic programs.

Minimize 0.5 z'Qz + c'z subject to A z <= b, with Q symmetric positive
definite, dimension at most a handful and a handful of constraints. Active
sets of size up to dim(z) are enumerated in a fixed order and each
equality-constrained KKT system is solved exactly; because the objective is
strictly convex, the first candidate passing the multiplier-sign and
feasibility checks is the unique global minimizer, so no iterative tuning or
tie-breaking is ever needed and results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

__all__ = ["QpValidationError", "QpProblem", "QpSolution", "solve_qp"]

FEASIBILITY_TOL = 1e-9
MULTIPLIER_TOL = 1e-9


class QpValidationError(ValueError):
    """The problem data violates the solver's contract."""


def _as_matrix(rows, label):
    out = tuple(tuple(float(v) for v in row) for row in rows)
    widths = {len(row) for row in out}
    if len(widths) > 1:
        raise QpValidationError(f"{label} has ragged rows")
    for row in out:
        for v in row:
            if not math.isfinite(v):
                raise QpValidationError(f"{label} has non-finite entries")
    return out


@dataclass(frozen=True)
class QpProblem:
    """minimize 0.5 z'Qz + c'z  subject to  A z <= b."""

    Q: tuple
    c: tuple
    A: tuple
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "Q", _as_matrix(self.Q, "Q"))
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "A", _as_matrix(self.A, "A") if self.A else ())
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        dim = len(self.c)
        if len(self.Q) != dim or (self.Q and len(self.Q[0]) != dim):
            raise QpValidationError("Q shape does not match c")
        if len(self.A) != len(self.b):
            raise QpValidationError("A and b disagree on constraint count")
        if self.A and len(self.A[0]) != dim:
            raise QpValidationError("A width does not match decision dimension")

    @property
    def dim(self) -> int:
        return len(self.c)

    def objective(self, z) -> float:
        quad = 0.0
        for i, row in enumerate(self.Q):
            for j, qij in enumerate(row):
                quad += z[i] * qij * z[j]
        return 0.5 * quad + sum(ci * zi for ci, zi in zip(self.c, z))


@dataclass(frozen=True)
class QpSolution:
    """Minimizer with its active-set certificate.

    multipliers has one entry per constraint row, zero off the active set.
    status is "optimal" or "infeasible"; z is empty when infeasible.
    """

    z: tuple
    active_set: tuple
    objective: float
    status: str
    multipliers: tuple


def _cholesky_or_none(Q):
    # Also serves as the positive-definiteness check.
    n = len(Q)
    L = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = Q[i][j] - sum(L[i][k] * L[j][k] for k in range(j))
            if i == j:
                if s <= 0.0:
                    return None
                L[i][i] = math.sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    return L


def _solve_dense(rows, rhs, scale):
    """Gaussian elimination with partial pivoting; None when singular."""
    n = len(rows)
    a = [list(row) + [rhs[i]] for i, row in enumerate(rows)]
    tol = 1e-13 * scale
    for col in range(n):
        pivot_row = max(range(col, n), key=lambda r: abs(a[r][col]))
        pivot = a[pivot_row][col]
        if abs(pivot) <= tol:
            return None
        if pivot_row != col:
            a[col], a[pivot_row] = a[pivot_row], a[col]
        inv = 1.0 / pivot
        base = a[col]
        for r in range(col + 1, n):
            factor = a[r][col] * inv
            if factor != 0.0:
                arow = a[r]
                for cc in range(col, n + 1):
                    arow[cc] -= factor * base[cc]
    out = [0.0] * n
    for i in range(n - 1, -1, -1):
        s = a[i][n] - sum(a[i][j] * out[j] for j in range(i + 1, n))
        out[i] = s / a[i][i]
    return out


def solve_qp(problem: QpProblem) -> QpSolution:
    """Enumerate active sets in a fixed order and return the first KKT point.

    A candidate must satisfy primal feasibility to 1e-9 and have multipliers
    >= -1e-9 on its active set. With Q positive definite such a candidate is
    the unique global minimizer (the KKT conditions are sufficient), so the
    scan stops there; the enumeration order is fixed, which keeps the reported
    active-set certificate deterministic even in degenerate geometries.
    Singular KKT subsystems are skipped. Status is "infeasible" when no
    candidate survives.
    """
    Q, c, A, b = problem.Q, problem.c, problem.A, problem.b
    dim = problem.dim
    sym_scale = max((abs(v) for row in Q for v in row), default=0.0)
    for i in range(dim):
        for j in range(i + 1, dim):
            if abs(Q[i][j] - Q[j][i]) > 1e-12 * max(sym_scale, 1.0):
                raise QpValidationError("Q is not symmetric")
    if _cholesky_or_none(Q) is None:
        raise QpValidationError("Q is not positive definite")

    n_con = len(A)
    scale = max(
        sym_scale,
        max((abs(v) for row in A for v in row), default=0.0),
        1.0,
    )
    for size in range(0, min(dim, n_con) + 1):
        for subset in combinations(range(n_con), size):
            rows = []
            rhs = []
            for i in range(dim):
                row = list(Q[i]) + [A[s][i] for s in subset]
                rows.append(row)
                rhs.append(-c[i])
            for s in subset:
                rows.append(list(A[s]) + [0.0] * size)
                rhs.append(b[s])
            solution = _solve_dense(rows, rhs, scale)
            if solution is None:
                continue
            z = solution[:dim]
            lam = solution[dim:]
            if any(l < -MULTIPLIER_TOL for l in lam):
                continue
            feasible = True
            for i in range(n_con):
                if sum(A[i][j] * z[j] for j in range(dim)) > b[i] + FEASIBILITY_TOL:
                    feasible = False
                    break
            if not feasible:
                continue
            multipliers = [0.0] * n_con
            for s, l in zip(subset, lam):
                multipliers[s] = l
            return QpSolution(
                z=tuple(z),
                active_set=subset,
                objective=problem.objective(z),
                status="optimal",
                multipliers=tuple(multipliers),
            )
    return QpSolution(
        z=(), active_set=(), objective=math.inf, status="infeasible", multipliers=()
    )
