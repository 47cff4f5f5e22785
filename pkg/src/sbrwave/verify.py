"""Localise the maximiser of sigma^2(t) = sum_k phi(t - k)^2 and certify the
SBR constants.

The loop refines the cascade one level at a time on a shrinking torus arc
``I``.  At each level every cell of ``I`` gets enclosures of sigma^2 and its
first two derivatives; cells that could hold a maximiser (upper bound above
the best lower bound, derivative enclosure containing 0) determine the next
arc.  Concavity on the final arc proves the maximiser is unique.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import numpy as np

from .cascade import (
    FunctionEnclosure,
    TorusWindow,
    build_ladders,
    certify,
)
from .filters import FilterBank, make_filter
from .mpinterval import BallArray, Interval, PrecisionContext, int_ceil_scaled

OUT_PREC = 128


class InconsistentEnclosure(RuntimeError):
    pass


class DenominatorNotNegative(ArithmeticError):
    pass


def _iv(x_scaled: int, bits: int, up: bool | None = None) -> Interval:
    q = Fraction(int(x_scaled), 1 << bits)
    return Interval(q, q, OUT_PREC)


def _span(lo_scaled: int, hi_scaled: int, bits: int) -> Interval:
    return Interval(Fraction(int(lo_scaled), 1 << bits), Fraction(int(hi_scaled), 1 << bits), OUT_PREC)


@dataclass
class SigmaEnclosure:
    """Per-cell enclosures over the cells of ``window`` (arc order).

    ``s0`` encloses sigma^2, ``s1`` its derivative, ``s2`` the second
    derivative and ``num`` the sum of phi'(t - k)^2.  An order whose error
    bound is not finite is stored as ``None`` (unbounded).
    """

    j: int
    window: TorusWindow
    cells: np.ndarray
    bits: int
    s0: BallArray | None
    s1: BallArray | None
    s2: BallArray | None
    num: BallArray | None

    def get(self, name: str, i: int) -> Interval:
        arr = getattr(self, name)
        if arr is None:
            return Interval.entire(OUT_PREC)
        lo = int(arr.mid[i] - arr.rad[i])
        if name in ("s0", "num"):
            lo = max(lo, 0)
        return _span(lo, int(arr.mid[i] + arr.rad[i]), self.bits)

    def s0_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.s0.lower()
        lo = np.where(lo < 0, 0, lo)
        return lo, self.s0.upper()

    def torus_mean(self) -> Interval:
        """Mean of the s0 cells (contains the integral of sigma^2, i.e. 1)."""
        if self.s0 is None:
            return Interval.entire(OUT_PREC)
        if not self.window.full:
            raise ValueError("torus mean needs a full-torus enclosure")
        lo, hi = self.s0_bounds()
        n = len(self.cells)
        return _span(int(lo.sum()), int(hi.sum()), self.bits) / n


def _with_eps(vals: BallArray, eps: Interval, bits: int) -> BallArray:
    return vals.widen(int_ceil_scaled(eps.hi, bits))


def sigma_enclosure(phi0: FunctionEnclosure, phi1: FunctionEnclosure, phi2: FunctionEnclosure,
                    window: TorusWindow | None = None) -> SigmaEnclosure:
    """Enclose sigma^2, (sigma^2)', (sigma^2)'' and sum phi'^2 on each cell."""
    j = phi0.j
    if not (phi1.j == j and phi2.j == j):
        raise ValueError("enclosures must share the level")
    window = (window or phi0.window).refine(j)
    cells = window.cells()
    bits = phi0.ladder.bits
    shifts = phi0.shift_indices(cells)

    def shifted(enc):
        if not gmpy2.is_finite(enc.eps.hi):
            return None
        return [_with_eps(enc.values(idx), enc.eps, bits) for idx in shifts]

    F0, F1, F2 = shifted(phi0), shifted(phi1), shifted(phi2)

    def total(terms):
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc

    s0 = total([f.sqr() for f in F0]) if F0 else None
    num = total([f.sqr() for f in F1]) if F1 else None
    s1 = total([a * b for a, b in zip(F1, F0)]).scaled_int(2) if (F0 and F1) else None
    s2 = None
    if F0 and F1 and F2:
        s2 = (total([a * b for a, b in zip(F2, F0)]) + num).scaled_int(2)
    return SigmaEnclosure(j, window, cells, bits, s0, s1, s2, num)


def _candidate_mask(se: SigmaEnclosure) -> np.ndarray:
    n = len(se.cells)
    if se.s0 is None:
        return np.ones(n, dtype=bool)
    lo, hi = se.s0_bounds()
    best_lo = lo.max()
    mask = hi >= best_lo
    if se.s1 is not None:
        mask &= (se.s1.lower() <= 0) & (se.s1.upper() >= 0)
    return np.asarray(mask, dtype=bool)


def _arc_from_positions(window: TorusWindow, pos: np.ndarray) -> TorusWindow:
    j = window.j
    if not window.full:
        return TorusWindow(j, window.a + int(pos.min()), window.a + int(pos.max()))
    n = 1 << j
    cells = np.sort(pos)
    if len(cells) == n:
        return TorusWindow.whole(j)
    gaps = np.diff(np.concatenate([cells, [cells[0] + n]]))
    g = int(np.argmax(gaps))  # largest gap follows cells[g]
    start = int(cells[(g + 1) % len(cells)])
    end = int(cells[g])
    if end < start:
        end += n
    return TorusWindow(j, start, end)


def candidate_interval(se: SigmaEnclosure) -> TorusWindow:
    """Smallest torus arc holding every cell that may contain a maximiser."""
    mask = _candidate_mask(se)
    if not mask.any():
        raise InconsistentEnclosure("no candidate cell; enclosures are inconsistent")
    return _arc_from_positions(se.window, np.nonzero(mask)[0])


def upsilon_enclosure(se: SigmaEnclosure, positions=None) -> Interval:
    """-2 * hull(sum phi'^2) / hull((sigma^2)'') over the given cells."""
    if se.num is None or se.s2 is None:
        raise DenominatorNotNegative("derivative enclosures are unbounded")
    pos = np.arange(len(se.cells)) if positions is None else np.asarray(positions)
    num_lo = max(int((se.num.lower()[pos]).min()), 0)
    num_hi = int((se.num.upper()[pos]).max())
    den_lo = int((se.s2.lower()[pos]).min())
    den_hi = int((se.s2.upper()[pos]).max())
    if den_hi >= 0:
        raise DenominatorNotNegative("denominator not certified negative")
    num = _span(num_lo, num_hi, se.bits)
    den = _span(den_lo, den_hi, se.bits)
    return -(num * 2) / den


def upsilon_direct(num: Interval, den: Interval, sigma_bar_sq: Interval) -> Interval:
    """The defining form -num / (sigma_bar * sigma''), sigma'' = den / (2 sigma_bar)."""
    sb = sigma_bar_sq.sqrt()
    return -num / (sb * (den / (sb * 2)))


@dataclass
class LevelRecord:
    j: int
    precision_bits: int
    window: dict
    candidates: int
    alpha: list
    eps: list
    sigma_bar_sq: tuple
    upsilon: tuple | None


@dataclass
class VerificationReport:
    verified: bool
    family: str
    N: int
    I_final: TorusWindow
    t0_enclosure: TorusWindow
    sigma_bar_sq: Interval
    upsilon: Interval
    j_final: int
    precision_bits: int
    second_deriv_upper: Interval
    reason: str = ""
    seconds: float = 0.0
    history: list = field(default_factory=list)
    notes: tuple = ()

    def to_dict(self, digits: int = 20, with_history: bool = False) -> dict:
        def iv(x: Interval):
            lo, hi = x.to_decimal(digits)
            return {"lo": lo, "hi": hi}

        d = {
            "verified": self.verified,
            "family": self.family,
            "N": self.N,
            "I_final": self.I_final.describe(),
            "t0_enclosure": self.t0_enclosure.describe(),
            "sigma_bar_sq": iv(self.sigma_bar_sq),
            "upsilon": iv(self.upsilon),
            "j_final": self.j_final,
            "precision_bits": self.precision_bits,
            "second_deriv_upper": iv(self.second_deriv_upper),
            "reason": self.reason,
            "notes": list(self.notes),
        }
        if with_history:
            d["history"] = [h.__dict__ for h in self.history]
        return d


def _intersect(old: Interval | None, new: Interval) -> Interval:
    if old is None:
        return new
    if not old.overlaps(new):
        raise InconsistentEnclosure(f"disjoint enclosures {old!r} and {new!r}")
    return old.intersect(new)


def _needs_more_precision(ladders, certs, L: int, window: TorusWindow) -> bool:
    """Rounding radius of the stored cascade must stay well below the error bound."""
    for n in (0, 1, 2):
        lad = ladders[n]
        e = certs[n].eps.hi
        if not gmpy2.is_finite(e) or e == 0:
            continue
        rad = Fraction(lad.max_rad(L), 1 << lad.bits)
        if rad > Fraction(*e.as_integer_ratio()) / 64:
            return True
    lad = ladders[3]
    rad = Fraction(lad.max_rad(L), 1 << lad.bits) * (2 * lad.K)
    M = Fraction(lad.row_sum_max(L, window), 1 << lad.bits)
    return M > 0 and rad > M / 1024


def verify_assumption(family: str | FilterBank, N: int | None = None, target_width: float = 1e-6,
                      max_level: int = 160, ctx: PrecisionContext | None = None,
                      max_cells: int = 1 << 13, symlet_convention: str = "phase",
                      progress=None) -> VerificationReport:
    """Run the localisation loop until both constants are enclosed to ``target_width``."""
    if target_width <= 0:
        raise ValueError("target_width must be positive")
    t_start = time.perf_counter()
    ctx = ctx or PrecisionContext.from_env()
    bank = family if isinstance(family, FilterBank) else make_filter(family, N, ctx, symlet_convention)
    K = bank.K
    target = Fraction(target_width)

    def rebuild(bank, bits, L, window):
        lads = build_ladders(bank, (0, 1, 2, 3), bits)
        for lad in lads.values():
            lad.run_to(L, window.refine(L))
        return lads

    bits = bank.precision_bits
    ladders = build_ladders(bank, (0, 1, 2, 3), bits)
    window = TorusWindow.whole(0)
    sb = ups = None
    history: list[LevelRecord] = []
    reason = "max_level reached"
    verified = False
    d2_upper = Interval.entire(OUT_PREC)
    L = 0
    while L < max_level:
        L += 1
        Iw = window.refine(L)
        if Iw.ncells > max_cells:
            reason = f"candidate arc still has {Iw.ncells} cells at level {L} (> max_cells)"
            L -= 1
            break
        for lad in ladders.values():
            lad.advance(Iw)
        certs = {n: certify(ladders[n], ladders[n + 1], L, Iw) for n in (0, 1, 2)}
        if L >= 4 and _needs_more_precision(ladders, certs, L, Iw):
            # rounding dominates: regenerate the filter and replay the ladder at 2x bits
            ctx = ctx.doubled()
            bits = ctx.precision_bits
            if bank.family != "custom":
                bank = make_filter(bank.family, bank.N, ctx, symlet_convention)
            ladders = rebuild(bank, bits, L, Iw)
            certs = {n: certify(ladders[n], ladders[n + 1], L, Iw) for n in (0, 1, 2)}
        encs = [FunctionEnclosure(n, L, K, Iw, ladders[n], certs[n].alpha, certs[n].c_const, certs[n].eps)
                for n in (0, 1, 2)]
        se = sigma_enclosure(*encs, window=Iw)
        mask = _candidate_mask(se)
        if not mask.any():
            raise InconsistentEnclosure(f"no candidates at level {L}")
        pos = np.nonzero(mask)[0]
        new_window = _arc_from_positions(Iw, pos)

        # sigma-bar^2: best lower bound anywhere, best upper bound among candidates
        if se.s0 is not None:
            lo, hi = se.s0_bounds()
            sb = _intersect(sb, _span(int(lo.max()), int(hi[pos].max()), se.bits))
        # concavity must hold on the whole new arc, not just the candidates
        arc_pos = (new_window.cells() - Iw.a) % (1 << L)
        level_ups = None
        if se.s2 is not None:
            d2 = _span(int(se.s2.lower()[arc_pos].min()), int(se.s2.upper()[arc_pos].max()), se.bits)
            if d2.hi < 0:
                d2_upper = d2 if not verified else d2_upper.intersect(d2) if d2_upper.overlaps(d2) else d2
                level_ups = upsilon_enclosure(se, pos)
                ups = _intersect(ups, level_ups)
                verified = True
            elif not verified:
                d2_upper = d2
        history.append(LevelRecord(
            L, bits, new_window.describe(), int(mask.sum()),
            [float(c.alpha.lo) for c in certs.values()],
            [float(c.eps.hi) for c in certs.values()],
            tuple(sb.to_decimal(12)) if sb is not None else None,
            tuple(ups.to_decimal(12)) if ups is not None else None,
        ))
        if progress:
            progress(history[-1])
        window = new_window
        if verified and Fraction(*sb.width.as_integer_ratio()) <= target \
                and Fraction(*ups.width.as_integer_ratio()) <= target:
            reason = "target width reached"
            break
    if not verified and reason == "max_level reached":
        reason = "max_level reached without a concavity certificate"
    return VerificationReport(
        verified=bool(verified and ups.lo > 0),
        family=bank.family,
        N=bank.N,
        I_final=window,
        t0_enclosure=window,
        sigma_bar_sq=sb if sb is not None else Interval.entire(OUT_PREC),
        upsilon=ups if ups is not None else Interval.entire(OUT_PREC),
        j_final=L,
        precision_bits=bits,
        second_deriv_upper=d2_upper,
        reason=reason,
        seconds=time.perf_counter() - t_start,
        history=history,
        notes=tuple(bank.notes),
    )
