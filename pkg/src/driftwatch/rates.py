"""Confusion-count bookkeeping and the four monitored rates.

Every matrix in this package is indexed ``[predicted][true]``::

            true=0  true=1
    pred=0    TN      FN
    pred=1    FP      TP

so ``c[yhat][y]`` is the cell incremented by an observation ``(y, yhat)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence


class RateKind(enum.Enum):
    TPR = "tpr"
    TNR = "tnr"
    PPV = "ppv"
    NPV = "npv"

    def __str__(self) -> str:
        return self.value


RATES: tuple[RateKind, ...] = (RateKind.TPR, RateKind.TNR, RateKind.PPV, RateKind.NPV)

# (numerator cell, second denominator cell) per rate; the numerator is always
# part of the denominator.
_CELLS = {
    RateKind.TPR: ((1, 1), (0, 1)),
    RateKind.TNR: ((0, 0), (1, 0)),
    RateKind.PPV: ((1, 1), (1, 0)),
    RateKind.NPV: ((0, 0), (0, 1)),
}


def check_label(value) -> int:
    """Return ``value`` as an int label, rejecting anything but 0 and 1."""
    if value not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {value!r}")
    return int(value)


def influenced_rates(y: int, yhat: int) -> tuple[RateKind, RateKind]:
    """The two rates whose empirical value moves when ``(y, yhat)`` is observed.

    tpr/tnr denominators are partitioned by the true label, ppv/npv
    denominators by the predicted label.
    """
    return (
        RateKind.TPR if y == 1 else RateKind.TNR,
        RateKind.PPV if yhat == 1 else RateKind.NPV,
    )


@dataclass
class ConfusionCounts:
    """Running 2x2 counts, initialised to all ones."""

    c: list[list[int]] = field(default_factory=lambda: [[1, 1], [1, 1]])

    def __post_init__(self):
        if len(self.c) != 2 or any(len(row) != 2 for row in self.c):
            raise ValueError("confusion counts must be 2x2")
        if any(v < 1 for row in self.c for v in row):
            raise ValueError("confusion counts must all be >= 1")
        self.c = [list(map(int, row)) for row in self.c]

    def add(self, y: int, yhat: int) -> None:
        self.c[yhat][y] += 1

    def total(self) -> int:
        return sum(self.c[0]) + sum(self.c[1])

    def copy(self) -> "ConfusionCounts":
        return ConfusionCounts([row[:] for row in self.c])


def rate_denominator(c: ConfusionCounts, kind: RateKind) -> int:
    (i, j), (k, l) = _CELLS[kind]
    return c.c[i][j] + c.c[k][l]


def empirical_rate(c: ConfusionCounts, kind: RateKind) -> float:
    (i, j), (k, l) = _CELLS[kind]
    num = c.c[i][j]
    return num / (num + c.c[k][l])


@dataclass(frozen=True)
class ConfusionProbMatrix:
    """Joint distribution of ``(yhat, y)`` over the four confusion cells.

    Entries may be floats or :class:`fractions.Fraction`; exact fractions keep
    the derived population rates exact.
    """

    p: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        rows = tuple(tuple(row) for row in self.p)
        if len(rows) != 2 or any(len(r) != 2 for r in rows):
            raise ValueError("confusion probability matrix must be 2x2")
        if any(v < 0 for r in rows for v in r):
            raise ValueError("confusion probabilities must be nonnegative")
        if abs(float(sum(rows[0]) + sum(rows[1])) - 1.0) > 1e-12:
            raise ValueError("confusion probabilities must sum to 1")
        if any(sum(r) <= 0 for r in rows) or any(rows[0][j] + rows[1][j] <= 0 for j in (0, 1)):
            raise ValueError("every row and column needs positive mass")
        object.__setattr__(self, "p", rows)

    @classmethod
    def from_nested(cls, values: Sequence[Sequence]) -> "ConfusionProbMatrix":
        return cls(tuple(tuple(row) for row in values))

    def rate(self, kind: RateKind):
        (i, j), (k, l) = _CELLS[kind]
        num = self.p[i][j]
        return num / (num + self.p[k][l])

    def accuracy(self):
        return self.p[0][0] + self.p[1][1]

    def positive_fraction(self):
        """P(y = 1)."""
        return self.p[0][1] + self.p[1][1]

    def cells(self) -> tuple[float, float, float, float]:
        """Cell probabilities in sampling order TN, FN, FP, TP."""
        return (
            float(self.p[0][0]),
            float(self.p[0][1]),
            float(self.p[1][0]),
            float(self.p[1][1]),
        )

    def as_lists(self) -> list[list[str | float]]:
        """JSON-friendly form; fractions are written as ``"a/b"`` strings."""
        return [[str(v) if isinstance(v, Fraction) else float(v) for v in row] for row in self.p]
