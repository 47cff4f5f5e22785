"""Independent reference values used by the tests.

Nothing here touches the cascade code: the db2 values are exact in Q(sqrt 3),
the general oracle solves the integer-point eigenproblem in mpmath and
extends to dyadics with the two-scale relation.  Coordinates are the
standard ones (support [0, 2K-1]); the package uses x - (K - 1).
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import mpmath

from sbrwave.mpinterval import Interval


class QR3:
    """a + b sqrt(3) with rational a, b."""

    __slots__ = ("a", "b")

    def __init__(self, a, b=0):
        self.a, self.b = Fraction(a), Fraction(b)

    def __add__(self, o):
        return QR3(self.a + o.a, self.b + o.b)

    def __mul__(self, o):
        return QR3(self.a * o.a + 3 * self.b * o.b, self.a * o.b + self.b * o.a)

    def __eq__(self, o):
        return self.a == o.a and self.b == o.b

    def interval(self, prec: int = 256) -> Interval:
        s3 = Interval(3, 3, prec).sqrt()
        return Interval(self.a, self.a, prec) + s3 * Interval(self.b, self.b, prec)

    def __float__(self):
        return float(self.a) + float(self.b) * 3 ** 0.5


DB2_H = (QR3(Fraction(1, 4), Fraction(1, 4)), QR3(Fraction(3, 4), Fraction(1, 4)),
         QR3(Fraction(3, 4), Fraction(-1, 4)), QR3(Fraction(1, 4), Fraction(-1, 4)))
_DB2_INT = {0: QR3(0), 1: QR3(Fraction(1, 2), Fraction(1, 2)), 2: QR3(Fraction(1, 2), Fraction(-1, 2)), 3: QR3(0)}


@lru_cache(maxsize=None)
def db2_phi_std(x: Fraction) -> QR3:
    """Exact db2 scaling function at a dyadic rational (standard support [0, 3])."""
    x = Fraction(x)
    if x <= 0 or x >= 3:
        return QR3(0)
    if x.denominator == 1:
        return _DB2_INT[int(x)]
    acc = QR3(0)
    for k, h in enumerate(DB2_H):
        acc = acc + h * db2_phi_std(2 * x - k)
    return acc


class EigenOracle:
    """phi^(n) at dyadic rationals for a filter given to high precision."""

    def __init__(self, coeffs, n: int, dps: int = 60):
        self.dps = dps
        self.n = n
        with mpmath.workdps(dps):
            self.h = [mpmath.mpf(c) for c in coeffs]
            L = len(self.h)  # 2K, support [0, L-1]
            inner = list(range(1, L - 1))
            m = len(inner)
            A = mpmath.matrix(m, m)
            for r, i in enumerate(inner):
                for c, k in enumerate(inner):
                    t = 2 * i - k
                    if 0 <= t < L:
                        A[r, c] = mpmath.mpf(2) ** n * self.h[t]
                A[r, r] -= 1
            rhs = mpmath.matrix(m, 1)
            # normalisation replaces the last row: sum_k k^n phi^(n)(-k) = n! (polynomial reproduction)
            for c, k in enumerate(inner):
                A[m - 1, c] = mpmath.mpf(-k) ** n
            rhs[m - 1] = mpmath.factorial(n)
            v = mpmath.lu_solve(A, rhs)
            self.ints = {k: v[c] for c, k in enumerate(inner)}
        self.L = L
        self._memo = {}

    def std(self, x: Fraction):
        x = Fraction(x)
        if x <= 0 or x >= self.L - 1:
            return mpmath.mpf(0)
        if x.denominator == 1:
            return self.ints[int(x)]
        if x in self._memo:
            return self._memo[x]
        with mpmath.workdps(self.dps):
            acc = mpmath.mpf(0)
            for k, h in enumerate(self.h):
                acc += h * self.std(2 * x - k)
            val = mpmath.mpf(2) ** self.n * acc
        self._memo[x] = val
        return val

    def __call__(self, x: Fraction):
        """Value at x in package coordinates (support [1-K, K])."""
        return self.std(Fraction(x) + self.L // 2 - 1)


def dyadics(K: int, depth: int):
    """All x = m 2^-depth in the package support [1-K, K]."""
    step = Fraction(1, 1 << depth)
    return [1 - K + i * step for i in range((2 * K - 1) * (1 << depth) + 1)]
