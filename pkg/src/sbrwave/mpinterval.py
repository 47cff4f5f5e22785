"""Arbitrary-precision interval arithmetic.

Two representations live here:

``Interval``
    A scalar ``[lo, hi]`` with MPFR endpoints.  Every operation rounds the lower
    endpoint towards -inf and the upper endpoint towards +inf, so the result
    contains the exact image of the operands.

``BallArray``
    A vector of intervals in fixed-point midpoint-radius form.  Midpoints and
    radii are Python integers scaled by ``2**bits``; additions are exact and
    each multiplication rounds once, with the rounding folded into the radius.
    This is the workhorse of the cascade, where millions of multiply-adds are
    needed and exact integer arithmetic vectorises through numpy object arrays.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, Union

import gmpy2
import numpy as np
from gmpy2 import mpfr, mpz

DEFAULT_PRECISION = 256

Number = Union[int, float, str, Fraction, "mpfr"]


class IntervalDomainError(ArithmeticError):
    """An operation was applied outside its domain (e.g. division by 0)."""


@dataclass(frozen=True)
class PrecisionContext:
    precision_bits: int = DEFAULT_PRECISION

    def __post_init__(self):
        if int(self.precision_bits) < 2:
            raise ValueError("precision_bits must be at least 2")

    @classmethod
    def from_env(cls, default: int = DEFAULT_PRECISION) -> "PrecisionContext":
        return cls(int(os.environ.get("SBR_PRECISION_BITS", default)))

    def doubled(self) -> "PrecisionContext":
        return PrecisionContext(2 * self.precision_bits)


@lru_cache(maxsize=None)
def _ctx(prec: int, up: bool):
    return gmpy2.context(
        precision=prec,
        round=gmpy2.RoundUp if up else gmpy2.RoundDown,
        emin=gmpy2.get_emin_min(),
        emax=gmpy2.get_emax_max(),
    )


def _prec(ctx: PrecisionContext | int | None) -> int:
    if ctx is None:
        return DEFAULT_PRECISION
    if isinstance(ctx, PrecisionContext):
        return ctx.precision_bits
    return int(ctx)


def _round(x, prec: int, up: bool) -> mpfr:
    """Round an exact number (int, Fraction, mpfr, float, decimal str) to ``prec`` bits."""
    c = _ctx(prec, up)
    if isinstance(x, str):
        x = Fraction(x)
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return c.plus(_exact(x.numerator))
        return c.div(_exact(x.numerator), _exact(x.denominator))
    return c.plus(_exact(x))


def _neg(x: mpfr) -> mpfr:
    """Exact negation (plain ``-x`` rounds to the global context precision)."""
    return _ctx(max(x.precision, 2), True).minus(x)


def _exact(x) -> mpfr:
    """Exact MPFR copy of an int / float / mpfr (enough bits, no rounding)."""
    if isinstance(x, (int, type(mpz(0)))):
        x = mpz(x)
        return mpfr(x, max(x.bit_length(), 2))
    if isinstance(x, float):
        return mpfr(x, 53)
    if isinstance(x, type(mpfr(0))):
        return x
    raise TypeError(f"cannot convert {type(x).__name__} exactly")


class Interval:
    """Closed interval with outward-rounded MPFR endpoints."""

    __slots__ = ("lo", "hi", "prec")

    def __init__(self, lo, hi=None, ctx: PrecisionContext | int | None = None):
        prec = _prec(ctx)
        if hi is None:
            hi = lo
        lo_r = _round(lo, prec, up=False) if not _is_mpfr_at(lo, prec) else lo
        hi_r = _round(hi, prec, up=True) if not _is_mpfr_at(hi, prec) else hi
        if gmpy2.is_nan(lo_r) or gmpy2.is_nan(hi_r):
            raise IntervalDomainError("NaN endpoint")
        if lo_r > hi_r:
            raise ValueError(f"empty interval [{lo_r}, {hi_r}]")
        self.lo = lo_r
        self.hi = hi_r
        self.prec = prec

    # -- construction -------------------------------------------------
    @classmethod
    def _raw(cls, lo: mpfr, hi: mpfr, prec: int) -> "Interval":
        if gmpy2.is_nan(lo) or gmpy2.is_nan(hi):
            raise IntervalDomainError("operation produced NaN")
        obj = object.__new__(cls)
        obj.lo, obj.hi, obj.prec = lo, hi, prec
        return obj

    @classmethod
    def point(cls, x: Number, ctx=None) -> "Interval":
        return cls(x, x, ctx)

    @classmethod
    def from_decimal(cls, value: str, radius: str = "0", ctx=None) -> "Interval":
        """``[value - radius, value + radius]`` with exact decimal semantics."""
        v, r = Fraction(value), Fraction(radius)
        if r < 0:
            raise ValueError("negative radius")
        return cls(v - r, v + r, ctx)

    @classmethod
    def entire(cls, ctx=None) -> "Interval":
        prec = _prec(ctx)
        return cls._raw(mpfr("-inf"), mpfr("inf"), prec)

    # -- basic queries ------------------------------------------------
    @property
    def width(self) -> mpfr:
        return _ctx(self.prec, True).sub(self.hi, self.lo)

    @property
    def mid(self) -> mpfr:
        c = _ctx(self.prec + 2, False)
        return c.div_2exp(c.add(self.lo, self.hi), 1)

    def contains(self, x) -> bool:
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        if isinstance(x, str):
            x = Fraction(x)
        if isinstance(x, Fraction):
            x = gmpy2.mpq(x.numerator, x.denominator)
        return bool(self.lo <= x <= self.hi)

    __contains__ = contains

    def overlaps(self, other: "Interval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def is_finite(self) -> bool:
        return bool(gmpy2.is_finite(self.lo) and gmpy2.is_finite(self.hi))

    def __repr__(self):
        return f"Interval({float(self.lo)!r}, {float(self.hi)!r})"

    def __eq__(self, other):
        return isinstance(other, Interval) and self.lo == other.lo and self.hi == other.hi

    def __hash__(self):
        return hash((self.lo, self.hi))

    def to_decimal(self, digits: int = 25) -> tuple[str, str]:
        """Outward-rounded decimal strings for the endpoints."""
        return _dec(self.lo, digits, up=False), _dec(self.hi, digits, up=True)

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other) -> "Interval":
        if isinstance(other, Interval):
            return other
        return Interval(other, other, self.prec)

    def _p(self, other: "Interval") -> int:
        return max(self.prec, other.prec)

    def __add__(self, other):
        o = self._coerce(other)
        p = self._p(o)
        return Interval._raw(_ctx(p, False).add(self.lo, o.lo), _ctx(p, True).add(self.hi, o.hi), p)

    __radd__ = __add__

    def __neg__(self):
        return Interval._raw(_neg(self.hi), _neg(self.lo), self.prec)

    def __sub__(self, other):
        o = self._coerce(other)
        p = self._p(o)
        return Interval._raw(_ctx(p, False).sub(self.lo, o.hi), _ctx(p, True).sub(self.hi, o.lo), p)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        p = self._p(o)
        dn, up = _ctx(p, False), _ctx(p, True)
        a, b, c, d = self.lo, self.hi, o.lo, o.hi
        if a >= 0 and c >= 0:
            return Interval._raw(_mul0(dn, a, c), _mul0(up, b, d), p)
        if b <= 0 and d <= 0:
            return Interval._raw(_mul0(dn, b, d), _mul0(up, a, c), p)
        pairs = ((a, c), (a, d), (b, c), (b, d))
        lo = min(_mul0(dn, x, y) for x, y in pairs)
        hi = max(_mul0(up, x, y) for x, y in pairs)
        return Interval._raw(lo, hi, p)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o.lo <= 0 <= o.hi:
            raise IntervalDomainError(f"division by an interval containing zero: {o!r}")
        p = self._p(o)
        dn, up = _ctx(p, False), _ctx(p, True)
        pairs = ((self.lo, o.lo), (self.lo, o.hi), (self.hi, o.lo), (self.hi, o.hi))
        lo = min(dn.div(x, y) for x, y in pairs)
        hi = max(up.div(x, y) for x, y in pairs)
        return Interval._raw(lo, hi, p)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def sqr(self) -> "Interval":
        """Square; tighter than ``x * x`` when the interval straddles zero."""
        p = self.prec
        dn, up = _ctx(p, False), _ctx(p, True)
        if self.lo >= 0:
            return Interval._raw(dn.square(self.lo), up.square(self.hi), p)
        if self.hi <= 0:
            return Interval._raw(dn.square(self.hi), up.square(self.lo), p)
        return Interval._raw(mpfr(0), up.square(max(_neg(self.lo), self.hi)), p)

    def __abs__(self):
        if self.lo >= 0:
            return self
        if self.hi <= 0:
            return -self
        return Interval._raw(mpfr(0), max(_neg(self.lo), self.hi), self.prec)

    def sqrt(self) -> "Interval":
        if self.lo < 0:
            raise IntervalDomainError(f"sqrt of an interval with negative part: {self!r}")
        p = self.prec
        return Interval._raw(_ctx(p, False).sqrt(self.lo), _ctx(p, True).sqrt(self.hi), p)

    def log(self) -> "Interval":
        if self.lo <= 0:
            raise IntervalDomainError(f"log of a non-positive interval: {self!r}")
        p = self.prec
        return Interval._raw(_ctx(p, False).log(self.lo), _ctx(p, True).log(self.hi), p)

    def log2(self) -> "Interval":
        if self.lo <= 0:
            raise IntervalDomainError(f"log2 of a non-positive interval: {self!r}")
        p = self.prec
        return Interval._raw(_ctx(p, False).log2(self.lo), _ctx(p, True).log2(self.hi), p)

    def exp(self) -> "Interval":
        p = self.prec
        return Interval._raw(_ctx(p, False).exp(self.lo), _ctx(p, True).exp(self.hi), p)

    def exp2(self) -> "Interval":
        p = self.prec
        return Interval._raw(_ctx(p, False).exp2(self.lo), _ctx(p, True).exp2(self.hi), p)

    def erfc(self) -> "Interval":
        # erfc is decreasing
        p = self.prec
        return Interval._raw(_ctx(p, False).erfc(self.hi), _ctx(p, True).erfc(self.lo), p)

    def min(self, other) -> "Interval":
        o = self._coerce(other)
        return Interval._raw(min(self.lo, o.lo), min(self.hi, o.hi), self._p(o))

    def max(self, other) -> "Interval":
        o = self._coerce(other)
        return Interval._raw(max(self.lo, o.lo), max(self.hi, o.hi), self._p(o))

    def hull(self, other) -> "Interval":
        o = self._coerce(other)
        return Interval._raw(min(self.lo, o.lo), max(self.hi, o.hi), self._p(o))

    def intersect(self, other: "Interval") -> "Interval":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        if lo > hi:
            raise ValueError("disjoint intervals: enclosures of one quantity must intersect")
        return Interval._raw(lo, hi, self._p(other))

    def with_precision(self, ctx) -> "Interval":
        p = _prec(ctx)
        return Interval._raw(_ctx(p, False).plus(self.lo), _ctx(p, True).plus(self.hi), p)


def _mul0(c, x, y):
    # 0 * inf must be 0 for interval products
    if x == 0 or y == 0:
        return mpfr(0)
    return c.mul(x, y)


def _is_mpfr_at(x, prec: int) -> bool:
    return isinstance(x, type(mpfr(0))) and (x.precision <= prec or not gmpy2.is_regular(x))


def _dec(x: mpfr, digits: int, up: bool) -> str:
    if not gmpy2.is_finite(x):
        return str(float(x))
    q = Fraction(*x.as_integer_ratio())
    if q == 0:
        return "0"
    e = len(str(abs(q.numerator) // q.denominator)) if abs(q) >= 1 else 0
    if abs(q) < 1:
        # scale so that the first significant digit is kept
        s = 0
        while abs(q) * 10 ** s < 1:
            s += 1
        scale = s + digits - 1
    else:
        scale = max(digits - e, 0)
    n = q * 10 ** scale
    k = -((-n.numerator) // n.denominator) if up else n.numerator // n.denominator
    sign = "-" if k < 0 else ""
    k = abs(k)
    s = str(k).rjust(scale + 1, "0")
    if scale:
        s = s[:-scale] + "." + s[-scale:]
    return sign + s


# ---------------------------------------------------------------------------
# operation table

def iv_arith(op: str, args: Sequence[Interval], ctx: PrecisionContext | None = None) -> Interval:
    """Apply ``op`` to interval arguments at the precision of ``ctx``."""
    if ctx is not None:
        args = [a if isinstance(a, Interval) else Interval(a, a, ctx) for a in args]
        args = [a if a.prec >= ctx.precision_bits else a.with_precision(ctx) for a in args]
    unary = {
        "sqrt": Interval.sqrt, "log": Interval.log, "exp": Interval.exp,
        "pow2": Interval.sqr, "abs": Interval.__abs__, "neg": Interval.__neg__,
    }
    binary = {
        "add": Interval.__add__, "sub": Interval.__sub__, "mul": Interval.__mul__,
        "div": Interval.__truediv__, "min": Interval.min, "max": Interval.max,
    }
    if op in unary:
        (a,) = args
        return unary[op](a)
    if op in binary:
        a, b = args
        return binary[op](a, b)
    raise ValueError(f"unknown interval operation {op!r}")


def iv_hull(a: Interval, b: Interval) -> Interval:
    return a.hull(b)


def hull_all(items: Iterable[Interval]) -> Interval:
    it = iter(items)
    out = next(it)
    for x in it:
        out = out.hull(x)
    return out


# ---------------------------------------------------------------------------
# fixed-point balls

def _as_obj(a) -> np.ndarray:
    arr = np.empty(len(a), dtype=object)
    arr[:] = [int(v) for v in a]
    return arr


def _cdiv_pow2(x, s: int):
    """Ceiling of x / 2**s for non-negative integer arrays (or scalars)."""
    return -((-x) >> s)


class BallArray:
    """Vector of intervals ``(mid +- rad) * 2**-bits`` with integer mid/rad."""

    __slots__ = ("mid", "rad", "bits")

    def __init__(self, mid, rad, bits: int):
        self.mid = mid if isinstance(mid, np.ndarray) and mid.dtype == object else _as_obj(mid)
        self.rad = rad if isinstance(rad, np.ndarray) and rad.dtype == object else _as_obj(rad)
        self.bits = bits

    @classmethod
    def zeros(cls, n: int, bits: int) -> "BallArray":
        z = np.empty(n, dtype=object)
        z[:] = 0
        return cls(z, z.copy(), bits)

    @classmethod
    def from_intervals(cls, ivs: Sequence[Interval], bits: int) -> "BallArray":
        mids, rads = [], []
        for iv in ivs:
            m, r = interval_to_ball(iv, bits)
            mids.append(m)
            rads.append(r)
        return cls(_as_obj(mids), _as_obj(rads), bits)

    def __len__(self):
        return len(self.mid)

    def __getitem__(self, idx) -> "BallArray":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1 if idx != -1 else None)
        return BallArray(self.mid[idx], self.rad[idx], self.bits)

    def copy(self) -> "BallArray":
        return BallArray(self.mid.copy(), self.rad.copy(), self.bits)

    def interval(self, i: int, ctx=None) -> Interval:
        return ball_to_interval(int(self.mid[i]), int(self.rad[i]), self.bits, ctx)

    def intervals(self, ctx=None) -> list[Interval]:
        return [self.interval(i, ctx) for i in range(len(self))]

    def __add__(self, other: "BallArray") -> "BallArray":
        return BallArray(self.mid + other.mid, self.rad + other.rad, self.bits)

    def __sub__(self, other: "BallArray") -> "BallArray":
        return BallArray(self.mid - other.mid, self.rad + other.rad, self.bits)

    def __neg__(self):
        return BallArray(-self.mid, self.rad.copy(), self.bits)

    def scaled_int(self, c: int) -> "BallArray":
        """Exact multiplication by an integer."""
        return BallArray(self.mid * c, self.rad * abs(c), self.bits)

    def __mul__(self, other: "BallArray") -> "BallArray":
        p = self.bits
        am, ar, bm, br = self.mid, self.rad, other.mid, other.rad
        prod = am * bm
        mid = prod >> p
        # truncation remainder is folded into the radius (exact products stay exact)
        err = np.abs(am) * br + ar * (np.abs(bm) + br) + (prod - (mid << p))
        return BallArray(mid, _cdiv_pow2(err, p), p)

    def sqr(self) -> "BallArray":
        """Square with the exact range of (m +- r)**2 before rounding."""
        p = self.bits
        m = np.abs(self.mid)
        r = self.rad
        straddle = m < r
        # |m| >= r: centre m^2 + r^2, radius 2|m|r ; otherwise [0, (|m|+r)^2]
        top = m + r
        c_full = m * m + r * r
        r_full = 2 * m * r
        c_str = (top * top) >> 1
        r_str = c_str + 1
        c = np.where(straddle, c_str, c_full)
        rr = np.where(straddle, r_str, r_full)
        cm = c >> p
        return BallArray(cm, _cdiv_pow2(rr + (c - (cm << p)), p), p)

    def widen(self, extra_int: int) -> "BallArray":
        return BallArray(self.mid, self.rad + extra_int, self.bits)

    def abs_upper(self) -> np.ndarray:
        """Integer upper bounds of |x| (scaled by 2**bits)."""
        return np.abs(self.mid) + self.rad

    def lower(self) -> np.ndarray:
        return self.mid - self.rad

    def upper(self) -> np.ndarray:
        return self.mid + self.rad

    def max_rad(self) -> int:
        return int(self.rad.max()) if len(self) else 0

    def concat(self, other: "BallArray") -> "BallArray":
        return BallArray(np.concatenate([self.mid, other.mid]), np.concatenate([self.rad, other.rad]), self.bits)


def interval_to_ball(iv: Interval, bits: int) -> tuple[int, int]:
    if not iv.is_finite():
        raise IntervalDomainError("cannot store an unbounded interval in a ball")
    ln, ld = iv.lo.as_integer_ratio()
    hn, hd = iv.hi.as_integer_ratio()
    lo = (int(ln) << bits) // int(ld)
    hi = -((-(int(hn) << bits)) // int(hd))
    mid = (lo + hi) >> 1
    return mid, max(hi - mid, mid - lo)


def ball_to_interval(mid: int, rad: int, bits: int, ctx=None) -> Interval:
    prec = _prec(ctx)
    lo = _ctx(prec, False).plus(mpfr(mpz(mid - rad), max((mid - rad).bit_length(), 2)))
    hi = _ctx(prec, True).plus(mpfr(mpz(mid + rad), max((mid + rad).bit_length(), 2)))
    return Interval._raw(_ctx(prec, False).mul_2exp(lo, -bits), _ctx(prec, True).mul_2exp(hi, -bits), prec)


def scaled_upper(x: int, bits: int) -> float:
    """A float >= x * 2**-bits."""
    v = float(Fraction(x, 1 << bits)) if x else 0.0
    return float(np.nextafter(v, np.inf)) if v or x > 0 else v


def scaled_lower(x: int, bits: int) -> float:
    v = float(Fraction(x, 1 << bits)) if x else 0.0
    return float(np.nextafter(v, -np.inf)) if v or x < 0 else v


def int_ceil_scaled(value: Interval | float, bits: int) -> int:
    """Smallest integer n with n * 2**-bits >= value (upper endpoint)."""
    if isinstance(value, Interval):
        value = value.hi
    q = Fraction(*mpfr(value).as_integer_ratio()) if not isinstance(value, Fraction) else value
    n = q * (1 << bits)
    return -((-n.numerator) // n.denominator)
