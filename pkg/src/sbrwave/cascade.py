"""Cascade refinement of scaling functions and their derivatives.

Level-``l`` arrays are indexed by ``0 <= k < 2**l * (2K - 1)``; cell ``k``
covers ``x`` in ``2**-l * [k, k + 1) - (K - 1)``.  Values are kept as
fixed-point balls (``BallArray``) so that a level is a handful of vectorised
big-integer operations.

Only indices in the periodic window set ``J(l)`` are retained at each level.
The set is closed under the refinement dependency, so windowed and full
computations perform the same operations on shared indices and agree bit for
bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import gmpy2
import numpy as np

from .filters import FilterBank
from .mpinterval import (
    BallArray,
    Interval,
    _neg,
    interval_to_ball,
    scaled_upper,
)

CERT_PREC = 96  # bits for alpha / C / eps arithmetic


class CoverageError(RuntimeError):
    """A requested value lies outside the retained window."""


class NoContraction(ArithmeticError):
    """alpha.lo <= 0: no contraction certificate at this level."""


# ---------------------------------------------------------------------------
# derived filters


@dataclass(frozen=True)
class DerivedFilter:
    n: int
    coeffs: tuple

    @property
    def K(self) -> int:
        return len(self.coeffs) // 2


def _derive_once(u: tuple) -> tuple:
    out = []
    for k in range(len(u)):
        acc = Interval(0, 0, u[0].prec)
        for i in range(k + 1):
            acc = acc + u[k - i] if i % 2 == 0 else acc - u[k - i]
        out.append(acc * 2)
    return tuple(out)


def derive_filter(bank: FilterBank, n: int) -> DerivedFilter:
    """u^(n) by n applications of u^(m+1)_k = 2 sum_i (-1)^i u^(m)_{k-i}."""
    if n < 0:
        raise ValueError("n must be >= 0")
    u = tuple(bank.u0)
    for _ in range(n):
        u = _derive_once(u)
    return DerivedFilter(n, u)


# ---------------------------------------------------------------------------
# torus windows and index sets


@dataclass(frozen=True)
class TorusWindow:
    """Arc ``2**-j [a, b + 1) + Z`` of the unit torus (``b`` may exceed 2**j - 1)."""

    j: int
    a: int
    b: int
    full: bool = False

    def __post_init__(self):
        n = 1 << self.j
        if self.b < self.a:
            raise ValueError("window needs a <= b")
        if self.b - self.a + 1 >= n and not self.full:
            object.__setattr__(self, "full", True)
        if self.full:
            object.__setattr__(self, "a", 0)
            object.__setattr__(self, "b", n - 1)
        elif not 0 <= self.a < n:
            shift = (self.a // n) * n
            object.__setattr__(self, "a", self.a - shift)
            object.__setattr__(self, "b", self.b - shift)

    @classmethod
    def whole(cls, j: int) -> "TorusWindow":
        return cls(j, 0, (1 << j) - 1, True)

    @property
    def ncells(self) -> int:
        return self.b - self.a + 1

    @property
    def width(self) -> Fraction:
        return Fraction(self.ncells, 1 << self.j)

    def cells(self) -> np.ndarray:
        """Cell indices mod 2**j, in arc order."""
        return np.arange(self.a, self.b + 1, dtype=np.int64) % (1 << self.j)

    def refine(self, level: int) -> "TorusWindow":
        if level < self.j:
            d = self.j - level
            if self.full:
                return TorusWindow.whole(level)
            return TorusWindow(level, self.a >> d, self.b >> d)
        d = level - self.j
        if self.full:
            return TorusWindow.whole(level)
        return TorusWindow(level, self.a << d, ((self.b + 1) << d) - 1)

    def arc(self) -> tuple[Fraction, Fraction]:
        """Left end in [0, 1) and right end (may exceed 1 when wrapping)."""
        s = Fraction(1, 1 << self.j)
        return self.a * s, (self.b + 1) * s

    def contains_point(self, t) -> bool:
        if self.full:
            return True
        lo, hi = self.arc()
        t = Fraction(t) % 1
        return lo <= t < hi or lo <= t + 1 < hi

    def contains_window(self, other: "TorusWindow") -> bool:
        if self.full:
            return True
        if other.full:
            return False
        lvl = max(self.j, other.j)
        s, o = self.refine(lvl), other.refine(lvl)
        n = 1 << lvl
        start = (o.a - s.a) % n
        return start + o.ncells <= s.ncells

    def describe(self) -> dict:
        lo, hi = self.arc()
        return {"j": self.j, "a": self.a, "b": self.b, "full": self.full,
                "left": str(lo), "right": str(hi), "width": str(self.width)}


@dataclass(frozen=True)
class PeriodicIndexSet:
    """``[A, B] + 2**l Z`` restricted to ``0 <= k < 2**l (2K - 1)``."""

    l: int
    A: int
    B: int
    K: int

    @property
    def period(self) -> int:
        return 1 << self.l

    @property
    def limit(self) -> int:
        return self.period * (2 * self.K - 1)

    @property
    def full(self) -> bool:
        return self.B - self.A + 1 >= self.period

    def residues(self) -> np.ndarray:
        if self.full:
            return np.arange(self.period, dtype=np.int64)
        return np.arange(self.A, self.B + 1, dtype=np.int64) % self.period

    def segments(self) -> list[tuple[int, int]]:
        """Merged inclusive ranges covering the set."""
        P, lim = self.period, self.limit
        if self.full:
            return [(0, lim - 1)]
        segs: list[tuple[int, int]] = []
        m = -((self.B) // P) - 1
        while self.A + P * m <= lim - 1:
            s, e = max(self.A + P * m, 0), min(self.B + P * m, lim - 1)
            if s <= e:
                if segs and s <= segs[-1][1] + 1:
                    segs[-1] = (segs[-1][0], max(e, segs[-1][1]))
                else:
                    segs.append((s, e))
            m += 1
        return segs

    def __contains__(self, k: int) -> bool:
        if not 0 <= k < self.limit:
            return False
        return self.full or (k - self.A) % self.period <= self.B - self.A

    def size(self) -> int:
        return sum(e - s + 1 for s, e in self.segments())


def window_indices(j: int, a: int, b: int, l: int, K: int) -> PeriodicIndexSet:
    """Retained index set at level ``l`` for the window ``2**-j [a, b+1)``.

    For ``l > j`` the window is first re-expressed at level ``l`` (the cells
    ``a 2**(l-j) .. (b+1) 2**(l-j) - 1``), which is the form the dependency
    argument needs; for ``l <= j`` this coincides with flooring ``a, b``.
    """
    if l > j:
        d = l - j
        a, b, j = a << d, ((b + 1) << d) - 1, l
    d = j - l
    return PeriodicIndexSet(l, (a >> d) - 2 * K + 2, b >> d, K)


def _window_set(window: TorusWindow, l: int, K: int) -> PeriodicIndexSet:
    if window.full:
        P = 1 << l
        return PeriodicIndexSet(l, 0, P - 1, K)
    return window_indices(window.j, window.a, window.b, l, K)


# ---------------------------------------------------------------------------
# level storage


@dataclass
class Level:
    l: int
    segs: list  # [(start, end, BallArray)]
    f_abs: list = field(default_factory=list)  # [(start, end, float ndarray)] of |f| upper

    def get(self, idx: np.ndarray, allow_outside: bool = True) -> BallArray:
        """Gather balls at integer indices; indices outside ``[0, limit)`` are zero."""
        bits = self.segs[0][2].bits if self.segs else 0
        mid = np.empty(len(idx), dtype=object)
        rad = np.empty(len(idx), dtype=object)
        mid[:] = 0
        rad[:] = 0
        found = np.zeros(len(idx), dtype=bool)
        for s, e, arr in self.segs:
            sel = (idx >= s) & (idx <= e)
            if sel.any():
                pos = idx[sel] - s
                mid[sel] = arr.mid[pos]
                rad[sel] = arr.rad[pos]
                found |= sel
        return BallArray(mid, rad, bits), found


class CascadeLadder:
    """Incremental windowed cascade for one derived filter ``u^(n)``.

    ``advance(window)`` computes the next level keeping only ``J(l)`` of
    ``window``; windows passed on successive calls must be nested (each
    contained in the previous one) for the stored coarse levels to cover the
    dependency cone.
    """

    def __init__(self, filt: DerivedFilter, bits: int):
        self.filt = filt
        self.K = filt.K
        self.bits = bits
        taps = [interval_to_ball(c, bits) for c in filt.coeffs]
        self.tap_mid = [m for m, _ in taps]
        self.tap_rad = [r for _, r in taps]
        delta = BallArray([1 << bits] + [0] * (2 * self.K - 2), [0] * (2 * self.K - 1), bits)
        self.levels: list[Level] = []
        self._push(Level(0, [(0, 2 * self.K - 2, delta)]))

    @property
    def n(self) -> int:
        return self.filt.n

    @property
    def level(self) -> int:
        return len(self.levels) - 1

    def _push(self, lev: Level):
        # float upper bounds of |f^(n)| at this level for the C constant
        lev.f_abs = []
        for s, e, arr in lev.segs:
            fv = self._f_from_level(lev, np.arange(s, e + 1, dtype=np.int64))
            ub = fv.abs_upper()
            lev.f_abs.append((s, e, np.array([scaled_upper(int(x), self.bits) for x in ub])))
        self.levels.append(lev)

    def _f_from_level(self, lev: Level, idx: np.ndarray) -> BallArray:
        n = self.n
        P = 1 << lev.l
        acc = None
        for i in range(n + 1):
            g, found = lev.get(idx - P * i)
            shifted = idx - P * i
            if not np.all(found | (shifted < 0)):
                raise CoverageError(f"level {lev.l}: f needs g outside the retained window")
            term = g.scaled_int(comb(n, i) * (-1) ** i)
            acc = term if acc is None else acc + term
        return acc

    def advance(self, window: TorusWindow) -> Level:
        prev = self.levels[-1]
        l = prev.l + 1
        K = self.K
        want = _window_set(window, l, K)
        segs = []
        for s, e in want.segments():
            p = -((-(s - 2 * K + 1)) // 2)
            q = e // 2
            pidx = np.arange(p, q + 1, dtype=np.int64)
            v, found = prev.get(pidx)
            inside = (pidx >= 0) & (pidx < (1 << prev.l) * (2 * K - 1))
            if not np.all(found | ~inside):
                raise CoverageError(
                    f"level {l}: parents of [{s}, {e}] not retained at level {prev.l}; "
                    "windows must be nested"
                )
            nv = len(pidx)
            ymid = np.empty(2 * nv + 2 * K, dtype=object)
            yrad = np.empty(2 * nv + 2 * K, dtype=object)
            ymid[:] = 0
            yrad[:] = 0
            y = BallArray(ymid, yrad, self.bits)
            for t in range(2 * K):
                tap = BallArray(np.full(nv, self.tap_mid[t], dtype=object),
                                np.full(nv, self.tap_rad[t], dtype=object), self.bits)
                prod = v * tap
                y.mid[t:t + 2 * nv:2] += prod.mid
                y.rad[t:t + 2 * nv:2] += prod.rad
            lo = s - 2 * p
            segs.append((s, e, BallArray(y.mid[lo:lo + e - s + 1].copy(),
                                         y.rad[lo:lo + e - s + 1].copy(), self.bits)))
        lev = Level(l, segs)
        self._push(lev)
        return lev

    def run_to(self, j: int, window: TorusWindow) -> None:
        while self.level < j:
            self.advance(window)

    def g(self, l: int, idx) -> BallArray:
        idx = np.asarray(idx, dtype=np.int64)
        vals, found = self.levels[l].get(idx)
        inside = (idx >= 0) & (idx < (1 << l) * (2 * self.K - 1))
        if not np.all(found | ~inside):
            raise CoverageError(f"level {l}: index outside retained window")
        return vals

    def f(self, l: int, idx) -> BallArray:
        return self._f_from_level(self.levels[l], np.asarray(idx, dtype=np.int64))

    def f_abs_max(self, l: int, window: TorusWindow) -> float:
        """Float upper bound of max |f_{l,k}| over k in J(l) of ``window``."""
        want = _window_set(window, l, self.K)
        best = 0.0
        for s, e in want.segments():
            for ss, ee, arr in self.levels[l].f_abs:
                lo, hi = max(s, ss), min(e, ee)
                if lo <= hi:
                    best = max(best, float(arr[lo - ss:hi - ss + 1].max()))
        return best

    def row_sum_max(self, l: int, window: TorusWindow) -> int:
        """Integer (scaled) upper bound of max over residues of sum_i |g_{l, r + 2**l i}|."""
        want = _window_set(window, l, self.K)
        r = np.unique(want.residues())
        P = 1 << l
        total = np.zeros(len(r), dtype=object)
        for i in range(2 * self.K - 1):
            total = total + self.g(l, r + P * i).abs_upper()
        return int(total.max())

    def max_rad(self, l: int) -> int:
        return max(arr.max_rad() for _, _, arr in self.levels[l].segs)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class ErrorCertificate:
    alpha: Interval
    c_const: Interval
    eps: Interval

    @property
    def finite(self) -> bool:
        return gmpy2.is_finite(self.eps.hi)


def third_factor(filt: DerivedFilter) -> Interval:
    """max_{m=0,1} sum_{k<K} | sum_{i<=k} u_{2i+m} - 1 |."""
    K = filt.K
    best = None
    for m in (0, 1):
        acc = Interval(0, 0, CERT_PREC)
        part = Interval(0, 0, CERT_PREC)
        for k in range(K):
            part = part + filt.coeffs[2 * k + m].with_precision(CERT_PREC)
            acc = acc + abs(part - 1)
        best = acc if best is None else best.max(acc)
    return best


def _alpha_from_rowsum(M_scaled: int, bits: int, L: int) -> Interval:
    M = Interval(Fraction(M_scaled, 1 << bits), Fraction(M_scaled, 1 << bits), CERT_PREC)
    if M.hi <= 0:
        return Interval(1, 1, CERT_PREC)  # zero derived cascade: any rate
    return 1 - M.log2() / L


def certify(lad_n: CascadeLadder, lad_n1: CascadeLadder, L: int, window: TorusWindow) -> ErrorCertificate:
    """alpha_L^(n)(I), C_L^(n)(I) and eps = C 2^{-L alpha} from stored ladders."""
    T3 = third_factor(lad_n.filt)
    if T3.lo == 0 and T3.hi == 0:
        zero = Interval(0, 0, CERT_PREC)
        return ErrorCertificate(Interval(1, 1, CERT_PREC), zero, zero)
    if L < 1:
        inf = Interval.entire(CERT_PREC)
        return ErrorCertificate(inf, inf, Interval(0, gmpy2.inf(), CERT_PREC))
    alpha = _alpha_from_rowsum(lad_n1.row_sum_max(L, window), lad_n1.bits, L)
    a = Interval(alpha.lo, alpha.lo, CERT_PREC)
    if a.lo <= 0:
        inf = Interval(0, gmpy2.inf(), CERT_PREC)
        return ErrorCertificate(alpha, inf, inf)
    best = Interval(0, 0, CERT_PREC)
    for l in range(L):
        fm = lad_n1.f_abs_max(l, window)
        term = ((a - 1) * l).exp2() * Interval(0, fm, CERT_PREC) if fm else Interval(0, 0, CERT_PREC)
        best = best.max(term)
    C = best * T3 / (1 - (-a).exp2())
    C = Interval(0, C.hi, CERT_PREC)
    eps = C * (-(a * L)).exp2()
    return ErrorCertificate(alpha, C, Interval(0, eps.hi, CERT_PREC))


# ---------------------------------------------------------------------------
# function enclosures


@dataclass
class FunctionEnclosure:
    """Cells ``f^(n)_{j,k}`` on ``J(j)`` of a window, plus a uniform error bound."""

    n: int
    j: int
    K: int
    window: TorusWindow
    ladder: CascadeLadder
    alpha: Interval
    c_const: Interval
    eps: Interval

    def values(self, idx) -> BallArray:
        return self.ladder.f(self.j, idx)

    def cell(self, k: int) -> Interval:
        return self.values([k]).interval(0, self.ladder.bits)

    def index_of(self, x) -> int:
        x = Fraction(x)
        return int(((x + self.K - 1) * (1 << self.j)) // 1)

    def enclose(self, x) -> Interval:
        """Interval guaranteed to contain phi^(n)(x) (outside the support: 0)."""
        x = Fraction(x)
        if x < 1 - self.K or x >= self.K:
            return Interval(0, 0, self.ladder.bits)
        c = self.cell(self.index_of(x))
        e = self.eps.hi
        return Interval(c.lo, c.hi, self.ladder.bits) + Interval(_neg(e), e, self.ladder.bits)

    def shift_indices(self, cells: np.ndarray) -> list[np.ndarray]:
        """Indices ``c + 2**j m`` (m = 0..2K-2): the values phi(t - k) for t in cell c."""
        P = 1 << self.j
        return [cells + P * m for m in range(2 * self.K - 1)]

    def rows(self):
        """(k, x_left, lo, hi) for all retained cells, in index order."""
        out = []
        for s, e, _ in self.ladder.levels[self.j].segs:
            idx = np.arange(s, e + 1, dtype=np.int64)
            vals = self.values(idx)
            for t, k in enumerate(idx):
                iv = vals.interval(t, 64)
                x = Fraction(int(k), 1 << self.j) - (self.K - 1)
                out.append((int(k), x, iv))
        return out


def cascade_g(filt: DerivedFilter, j: int, window: TorusWindow | None = None, bits: int = 256) -> dict:
    """Retained ``g^(n)_{j,k}`` as a dict ``k -> Interval``."""
    window = (window or TorusWindow.whole(j)).refine(max(j, (window or TorusWindow.whole(j)).j))
    lad = CascadeLadder(filt, bits)
    lad.run_to(j, window)
    out = {}
    for s, e, arr in lad.levels[j].segs:
        for t in range(e - s + 1):
            out[s + t] = arr.interval(t, bits)
    return out


def build_ladders(bank: FilterBank, orders, bits: int | None = None) -> dict:
    bits = bits or bank.precision_bits
    return {n: CascadeLadder(derive_filter(bank, n), bits) for n in orders}


def cascade_f(bank: FilterBank, n: int, j: int, window: TorusWindow | None = None,
              strict: bool = True, ladders: dict | None = None) -> FunctionEnclosure:
    """Level-j enclosure of phi^(n) on a window with certified eps.

    ``strict`` raises ``NoContraction`` when alpha.lo <= 0; otherwise the
    enclosure carries eps = +inf.
    """
    window = window or TorusWindow.whole(j)
    if ladders is None:
        ladders = build_ladders(bank, (n, n + 1))
        for lad in ladders.values():
            lad.run_to(j, window.refine(max(j, window.j)))
    cert = certify(ladders[n], ladders[n + 1], j, window)
    if strict and not cert.finite:
        raise NoContraction(f"no contraction certificate at level {j} (alpha.lo = {float(cert.alpha.lo):.4g})")
    return FunctionEnclosure(n, j, bank.K, window, ladders[n], cert.alpha, cert.c_const, cert.eps)


def alpha_bound(bank: FilterBank, n: int, j: int, window: TorusWindow | None = None) -> Interval:
    if j < 1:
        raise ValueError("alpha needs j >= 1")
    window = window or TorusWindow.whole(j)
    lad = CascadeLadder(derive_filter(bank, n + 1), bank.precision_bits)
    lad.run_to(j, window.refine(max(j, window.j)))
    return _alpha_from_rowsum(lad.row_sum_max(j, window), lad.bits, j)


def error_constant(bank: FilterBank, n: int, j: int, window: TorusWindow | None = None) -> Interval:
    return cascade_f(bank, n, j, window, strict=True).c_const
