"""Gumbel normalising constants and critical values for the sup-norm of the
variance term of a wavelet projection estimator.

Point versions use mpmath at 50 digits and return floats; the ``*_iv``
versions propagate interval enclosures of the constants.  Logs are natural.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import mpmath

from .mpinterval import Interval, _ctx

_DPS = 50


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class BandConstants:
    sigma_bar_sq: Interval | float
    upsilon: Interval | float
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")

    @staticmethod
    def white_noise(sigma_bar_sq, upsilon, n: float) -> "BandConstants":
        """sigma = n^(-1/2) for the white-noise model with n observations."""
        if n <= 0:
            raise DomainError("n must be positive")
        return BandConstants(sigma_bar_sq, upsilon, float(mpmath.mpf(n) ** -0.5))


@dataclass(frozen=True)
class CriticalQuery:
    j: float
    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise DomainError("gamma must lie in (0, 1)")
        if self.j < 1:
            raise DomainError("j must be >= 1")


def _mid(v) -> mpmath.mpf:
    if isinstance(v, Interval):
        return mpmath.mpf(str(v.mid))
    return mpmath.mpf(v)


def _check_j(j):
    if j < 1:
        raise DomainError("j must be >= 1")


def a_of(j: float) -> float:
    _check_j(j)
    with mpmath.workdps(_DPS):
        return float(mpmath.sqrt(2 * mpmath.log(2) * j))


def b_of(j: float, upsilon) -> float:
    _check_j(j)
    with mpmath.workdps(_DPS):
        ups = _mid(upsilon)
        if ups <= -1:
            raise DomainError("upsilon must exceed -1")
        a = mpmath.sqrt(2 * mpmath.log(2) * j)
        corr = mpmath.log(mpmath.pi * mpmath.log(2)) + mpmath.log(j)
        if ups != 0:
            corr -= mpmath.log(1 + ups) / 2
        return float(a - corr / (2 * a))


def c_of(j: float, constants: BandConstants) -> float:
    """Scale of the sup: sigma * sigma_bar * 2^(j/2)."""
    with mpmath.workdps(_DPS):
        return float(mpmath.sqrt(_mid(constants.sigma_bar_sq)) * constants.sigma * mpmath.mpf(2) ** (mpmath.mpf(j) / 2))


def x_of(gamma: float) -> float:
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    with mpmath.workdps(_DPS):
        return float(-mpmath.log(-mpmath.log1p(-mpmath.mpf(gamma))))


def gumbel_tail(x: float) -> float:
    """1 - exp(-exp(-x))."""
    with mpmath.workdps(_DPS):
        return float(-mpmath.expm1(-mpmath.exp(-mpmath.mpf(x))))


def normalized_threshold(q: CriticalQuery, upsilon) -> float:
    """Level x(gamma)/a(j) + b(j) for the unit-variance process."""
    with mpmath.workdps(_DPS):
        j = mpmath.mpf(q.j)
        a = mpmath.sqrt(2 * mpmath.log(2) * j)
        x = -mpmath.log(-mpmath.log1p(-mpmath.mpf(q.gamma)))
        ups = _mid(upsilon)
        if ups <= -1:
            raise DomainError("upsilon must exceed -1")
        corr = mpmath.log(mpmath.pi * mpmath.log(2)) + mpmath.log(j)
        if ups != 0:
            corr -= mpmath.log(1 + ups) / 2
        return float(x / a + a - corr / (2 * a))


def critical_value(q: CriticalQuery, c: BandConstants) -> float:
    """u = c(j) (x(gamma)/a(j) + b(j))."""
    with mpmath.workdps(_DPS):
        j = mpmath.mpf(q.j)
        a = mpmath.sqrt(2 * mpmath.log(2) * j)
        x = -mpmath.log(-mpmath.log1p(-mpmath.mpf(q.gamma)))
        ups = _mid(c.upsilon)
        if ups <= -1:
            raise DomainError("upsilon must exceed -1")
        corr = mpmath.log(mpmath.pi * mpmath.log(2)) + mpmath.log(j)
        if ups != 0:
            corr -= mpmath.log(1 + ups) / 2
        level = x / a + a - corr / (2 * a)
        scale = mpmath.sqrt(_mid(c.sigma_bar_sq)) * c.sigma * mpmath.mpf(2) ** (j / 2)
        return float(scale * level)


def components(q: CriticalQuery, c: BandConstants) -> dict:
    return {"a": a_of(q.j), "b": b_of(q.j, c.upsilon), "c": c_of(q.j, c), "x": x_of(q.gamma),
            "u": critical_value(q, c)}


# ---------------------------------------------------------------------------
# interval versions


def _as_iv(v, prec: int) -> Interval:
    if isinstance(v, Interval):
        return v.with_precision(prec)
    return Interval(Fraction(v), Fraction(v), prec)


def _pi(prec: int) -> Interval:
    with _ctx(prec, False):
        lo = gmpy2.const_pi()
    with _ctx(prec, True):
        hi = gmpy2.const_pi()
    return Interval(lo, hi, prec)


def a_iv(j, prec: int = 128) -> Interval:
    _check_j(j)
    return (Interval(2, 2, prec).log() * 2 * _as_iv(j, prec)).sqrt()


def b_iv(j, upsilon, prec: int = 128) -> Interval:
    ups = _as_iv(upsilon, prec)
    if ups.lo <= -1:
        raise DomainError("upsilon must exceed -1")
    a = a_iv(j, prec)
    corr = (_pi(prec) * Interval(2, 2, prec).log()).log() + _as_iv(j, prec).log()
    if not (ups.lo == 0 and ups.hi == 0):
        corr = corr - (ups + 1).log() / 2
    return a - corr / (a * 2)


def x_iv(gamma, prec: int = 128) -> Interval:
    g = _as_iv(gamma, prec)
    if g.lo <= 0 or g.hi >= 1:
        raise DomainError("gamma must lie in (0, 1)")
    return -((-((1 - g).log())).log())


def c_iv(j, constants: BandConstants, prec: int = 128) -> Interval:
    sb = _as_iv(constants.sigma_bar_sq, prec).sqrt()
    return sb * _as_iv(constants.sigma, prec) * (_as_iv(j, prec) / 2).exp2()


def critical_value_iv(q: CriticalQuery, c: BandConstants, prec: int = 128) -> Interval:
    return c_iv(q.j, c, prec) * (x_iv(q.gamma, prec) / a_iv(q.j, prec) + b_iv(q.j, c.upsilon, prec))


def normalized_threshold_iv(q: CriticalQuery, upsilon, prec: int = 128) -> Interval:
    return x_iv(q.gamma, prec) / a_iv(q.j, prec) + b_iv(q.j, upsilon, prec)
