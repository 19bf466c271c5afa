"""Linear class-K coefficient tables from pole placement.

Row i of the table holds the coefficients of prod_{j<=i}(s + p_j) below the
leading (monic) term, ordered ascending: (c_0^i, ..., c_{i-1}^i). Strictly
positive poles make every coefficient strictly positive, which is what the
linear class-K construction of the barrier cascades requires.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

__all__ = ["PolePlacementError", "PoleSet", "CoefficientTable", "coefficients_from_poles"]


class PolePlacementError(ValueError):
    """Invalid pole data for a class-K coefficient table."""


@dataclass(frozen=True)
class PoleSet:
    """Strictly positive poles p_1..p_m."""

    poles: tuple

    def __post_init__(self):
        object.__setattr__(self, "poles", tuple(float(p) for p in self.poles))
        if not self.poles:
            raise PolePlacementError("at least one pole is required")
        for p in self.poles:
            if not p > 0.0:
                raise PolePlacementError(f"pole {p!r} is not strictly positive")


@dataclass(frozen=True)
class CoefficientTable:
    """Rows indexed i = 1..m; row i is (c_0^i, ..., c_{i-1}^i), leading 1 implicit."""

    rows: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "rows", tuple(tuple(float(c) for c in row) for row in self.rows)
        )

    @property
    def order(self) -> int:
        return len(self.rows)

    def row(self, i: int) -> tuple:
        """Coefficients for level i (1-based), ascending in the derivative order."""
        if not 1 <= i <= len(self.rows):
            raise PolePlacementError(f"no coefficient row {i} in table of order {len(self.rows)}")
        return self.rows[i - 1]


def coefficients_from_poles(poles) -> CoefficientTable:
    """Expand prod(s + p_j) one linear factor at a time.

    Accepts a PoleSet or any sequence of strictly positive reals. Row i of the
    result is the ascending coefficient list of prod_{j<=i}(s + p_j) with the
    monic leading term dropped.
    """
    pole_values = poles.poles if isinstance(poles, PoleSet) else PoleSet(tuple(poles)).poles
    rows = []
    poly = [1.0]  # ascending coefficients, currently the constant polynomial 1
    for p in pole_values:
        multiplied = [0.0] * (len(poly) + 1)
        for j, c in enumerate(poly):
            multiplied[j] += c * p
            multiplied[j + 1] += c
        poly = multiplied
        rows.append(tuple(poly[:-1]))
    return CoefficientTable(tuple(rows))
