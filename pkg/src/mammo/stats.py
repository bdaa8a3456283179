"""Likelihood-ratio chi-square machinery used by the CHAID learner."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class DegenerateTable(ValueError):
    """Fewer than two non-empty rows or columns remain."""


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """Observed counts, rows = predictor categories, columns = target classes."""

    observed: np.ndarray

    def __post_init__(self):
        obs = np.array(self.observed, dtype=np.float64, copy=True)
        if obs.ndim != 2:
            raise ValueError("contingency table must be two-dimensional")
        if (obs < 0).any():
            raise ValueError("counts must be nonnegative")
        if obs.sum() <= 0:
            raise ValueError("contingency table is empty")
        obs.setflags(write=False)
        object.__setattr__(self, "observed", obs)

    @property
    def expected(self) -> np.ndarray:
        obs = self.observed
        return np.outer(obs.sum(axis=1), obs.sum(axis=0)) / obs.sum()

    def reduced(self) -> "ContingencyTable":
        """Drop all-zero rows and columns; raise :class:`DegenerateTable` if < 2x2 remains."""
        obs = self.observed
        obs = obs[obs.sum(axis=1) > 0][:, obs.sum(axis=0) > 0]
        if obs.shape[0] < 2 or obs.shape[1] < 2:
            raise DegenerateTable(f"table reduces to shape {obs.shape}")
        return ContingencyTable(obs)

    @property
    def dof(self) -> int:
        r, c = self.observed.shape
        return (r - 1) * (c - 1)


def _as_table(t):
    return t if isinstance(t, ContingencyTable) else ContingencyTable(t)


def g2_statistic(t) -> float:
    """``2 * sum n_ij * ln(n_ij / m_ij)`` over the reduced table, with 0 * ln 0 = 0."""
    table = _as_table(t).reduced()
    obs = table.observed
    exp = table.expected
    nz = obs > 0
    g2 = 2.0 * float(np.sum(obs[nz] * np.log(obs[nz] / exp[nz])))
    return max(g2, 0.0)


def g2_test(t):
    """Return ``(g2, dof, p)`` for a table, dof taken after zero rows/columns are dropped."""
    table = _as_table(t).reduced()
    g2 = g2_statistic(table)
    return g2, table.dof, chi2_pvalue(g2, table.dof)


# -------------------------------------------------------- incomplete gamma

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a, x):
    # P(a, x) by the power series, good for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a, x):
    # Q(a, x) by Lentz's continued fraction, good for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _lower_series(a, x)))
    return min(1.0, max(0.0, _upper_fraction(a, x)))


def chi2_pvalue(g2: float, d: int) -> float:
    """Upper tail ``Pr(chi2_d > g2)``."""
    if g2 < 0:
        raise ValueError("statistic must be nonnegative")
    if d < 1:
        raise ValueError("degrees of freedom must be >= 1")
    return gammaincc(d / 2.0, g2 / 2.0)


# --------------------------------------------------------------- bonferroni

def bonferroni_multiplier(c: int, r: int, kind: str) -> int:
    """Number of ways ``c`` categories can be reduced to ``r`` groups.

    Ordinal predictors may only merge adjacent categories, giving C(c-1, r-1);
    nominal ones may merge any, giving the Stirling number of the second kind.
    """
    if not 1 <= r <= c:
        raise ValueError(f"need 1 <= r <= c, got r={r}, c={c}")
    if kind == "ordinal":
        return math.comb(c - 1, r - 1)
    if kind == "nominal":
        total = sum(Fraction((-1) ** i * (r - i) ** c, math.factorial(i) * math.factorial(r - i))
                    for i in range(r))
        assert total.denominator == 1
        return int(total)
    raise ValueError(f"unknown kind {kind!r}")
