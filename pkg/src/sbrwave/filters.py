"""Two-scale filter coefficients with rigorous enclosures.

Coefficients are normalised so that the even-indexed and the odd-indexed taps
each sum to one; ``u[k]`` is the coefficient of ``phi(2x + K - 1 - k)`` in
the coordinates where ``phi`` is supported on ``[1 - K, K]``.

Generated filters are certified a posteriori: an approximate root-based
filter is computed with mpmath, then a Krawczyk test on the orthonormality
and vanishing-moment equations proves that a unique exact filter lies in a
narrow box around it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path

import mpmath
import numpy as np
from gmpy2 import mpfr

from .mpinterval import Interval, PrecisionContext


class FilterError(ValueError):
    pass


class PrecisionTooLow(FilterError):
    """The working precision cannot separate or certify the filter."""


@dataclass(frozen=True)
class FilterBank:
    family: str
    N: int
    K: int
    u0: tuple
    precision_bits: int
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.u0) != 2 * self.K:
            raise FilterError(f"expected {2 * self.K} coefficients, got {len(self.u0)}")

    @property
    def name(self) -> str:
        short = {"daubechies": "db", "symlet": "sym"}.get(self.family)
        return f"{short}{self.N}" if short else f"{self.family}{self.N}"

    def parity_sums(self) -> tuple[Interval, Interval]:
        even = sum(self.u0[0::2], Interval(0, 0, self.precision_bits))
        odd = sum(self.u0[1::2], Interval(0, 0, self.precision_bits))
        return even, odd

    def moment(self, i: int) -> Interval:
        """sum_k (-1)^k k^i u_k, which must contain 0 for i < N."""
        acc = Interval(0, 0, self.precision_bits)
        for k, u in enumerate(self.u0):
            acc = acc + u * ((-1) ** k * k ** i)
        return acc

    def vanishing_moments(self) -> int:
        n = 0
        while n < 2 * self.K and self.moment(n).contains(0):
            n += 1
        return n

    def midpoints(self) -> np.ndarray:
        return np.array([float(u.mid) for u in self.u0])

    def max_width(self) -> mpfr:
        return max(u.width for u in self.u0)


# ---------------------------------------------------------------------------
# approximate construction


def _daub_poly_roots(N: int, dps: int):
    """Roots y of sum_k binom(N-1+k, k) y^k (the Daubechies half-band factor)."""
    if N == 1:
        return []
    with mpmath.workdps(dps):
        coeffs = [mpmath.mpf(comb(N - 1 + k, k)) for k in range(N)][::-1]
        ys = mpmath.polyroots(coeffs, maxsteps=400, extraprec=4 * dps)
        return list(ys)


def _root_groups(N: int, dps: int):
    """z roots inside the unit circle, grouped so that conjugates flip together."""
    with mpmath.workdps(dps):
        zs = []
        for y in _daub_poly_roots(N, dps):
            b = 2 - 4 * y
            d = mpmath.sqrt(b * b - 4)
            z1, z2 = (b + d) / 2, (b - d) / 2
            zs.append(z1 if abs(z1) < 1 else z2)
        tol = mpmath.mpf(2) ** (-dps)
        groups, used = [], [False] * len(zs)
        order = sorted(range(len(zs)), key=lambda i: (float(mpmath.re(zs[i])), float(mpmath.im(zs[i]))))
        for i in order:
            if used[i]:
                continue
            used[i] = True
            z = zs[i]
            if abs(mpmath.im(z)) <= tol * 10 ** 6:
                groups.append((mpmath.re(z),))
                continue
            j = min((j for j in range(len(zs)) if not used[j]), key=lambda j: abs(zs[j] - mpmath.conj(z)))
            used[j] = True
            top = z if mpmath.im(z) > 0 else zs[j]
            groups.append((top, mpmath.conj(top)))
        return groups


def _poly_from_roots(roots, dps: int):
    with mpmath.workdps(dps):
        coeffs = [mpmath.mpc(1)]
        for r in roots:
            new = [mpmath.mpc(0)] * (len(coeffs) + 1)
            for i, c in enumerate(coeffs):
                new[i] += c
                new[i + 1] -= c * r
            coeffs = new
        return coeffs


def _filter_from_choice(N: int, groups, flips, dps: int):
    """Filter (ascending powers of z) with roots -1 (N-fold) and the chosen z's.

    Roots away from -1 are placed outside the unit circle for ``flip = False``
    so that the unflipped choice is the minimum-phase (energy-front-loaded)
    filter.
    """
    with mpmath.workdps(dps):
        roots = [mpmath.mpf(-1)] * N
        for g, flip in zip(groups, flips):
            for z in g:
                roots.append(z if flip else 1 / z)
        c = _poly_from_roots(roots, dps)  # descending powers
        c = [mpmath.re(x) for x in c][::-1]
        s = mpmath.fsum(c)
        return [2 * x / s for x in c]


def _phase_nonlinearity(coeffs, npts: int = 2048) -> float:
    """L2 deviation of the unwrapped phase of sum_k c_k e^{-ikw} on (0, pi)
    from its best least-squares line through the origin."""
    c = np.asarray(coeffs, dtype=float)
    w = np.linspace(0.0, np.pi, npts + 1)[1:-1]
    H = np.polyval(c[::-1], np.exp(-1j * w))
    ph = np.unwrap(np.angle(H))
    slope = np.dot(w, ph) / np.dot(w, w)
    return float(np.sum((ph - slope * w) ** 2))


# Root-flip patterns (group order of ``_root_groups``) reproducing the symlet
# tables shipped by common wavelet libraries.  They coincide with the
# phase criterion for N <= 11 and differ from it above.
REFERENCE_SYMLET_FLIPS = {
    4: "01", 5: "01", 6: "010", 7: "001", 8: "0101", 9: "0110", 10: "01010",
    11: "00110", 12: "010101", 13: "011100", 14: "0101100", 15: "0011100",
    16: "01011001", 17: "01110001", 18: "010110010", 19: "001110100",
    20: "0101100101",
}


def least_asymmetric_choice(N: int, dps: int = 40) -> tuple[bool, ...]:
    """Exhaustive search over root-flip subsets (first group pinned: the
    complementary subset is the time reverse, with the same score)."""
    groups = _root_groups(N, dps)
    best = None
    for tail in itertools.product((False, True), repeat=max(len(groups) - 1, 0)):
        flips = (False,) + tail if groups else ()
        c = [float(x) for x in _filter_from_choice(N, groups, flips, dps)]
        score = _phase_nonlinearity(c)
        if best is None or score < best[0] - 1e-9:
            best = (score, flips)
    return best[1] if best else ()


# ---------------------------------------------------------------------------
# certification


def _residual_system(N: int):
    """Equations F(u) = 0 satisfied by a normalised orthonormal filter of length 2N.

    Rows 0..N-1: sum_k u_k u_{k+2m} - 2 delta_m.
    Rows N..2N-1: sum_k (-1)^k (2k - 2N + 1)^i u_k  (vanishing moments, centred).
    """
    L = 2 * N
    moment_rows = [[(-1) ** k * (2 * k - L + 1) ** i for k in range(L)] for i in range(N)]

    def F(u, zero, two):
        out = []
        for m in range(N):
            acc = zero
            for k in range(L - 2 * m):
                acc = acc + u[k] * u[k + 2 * m]
            out.append(acc - two if m == 0 else acc)
        for row in moment_rows:
            acc = zero
            for k in range(L):
                if row[k]:
                    acc = acc + u[k] * row[k]
            out.append(acc)
        return out

    def J(u, zero):
        rows = []
        for m in range(N):
            row = []
            for j in range(L):
                if m == 0:
                    row.append(u[j] * 2)
                else:
                    acc = zero
                    if j + 2 * m < L:
                        acc = acc + u[j + 2 * m]
                    if j - 2 * m >= 0:
                        acc = acc + u[j - 2 * m]
                    row.append(acc)
            rows.append(row)
        for r in moment_rows:
            rows.append([zero + c for c in r])
        return rows

    return F, J


def _newton_polish(N: int, u, dps: int, steps: int = 3):
    F, J = _residual_system(N)
    with mpmath.workdps(dps):
        x = mpmath.matrix([mpmath.mpf(v) for v in u])
        for _ in range(steps):
            xs = [x[i] for i in range(len(u))]
            f = mpmath.matrix(F(xs, mpmath.mpf(0), mpmath.mpf(2)))
            jac = mpmath.matrix(J(xs, mpmath.mpf(0)))
            x = x - mpmath.lu_solve(jac, f)
        return [x[i] for i in range(len(u))], jac


def certify_filter(N: int, u_approx, ctx: PrecisionContext) -> tuple[Interval, ...]:
    """Krawczyk proof that a unique filter lies near ``u_approx``."""
    prec = ctx.precision_bits
    for extra in (64, 160, 400):
        internal = prec + extra + 4 * N
        dps = int(internal * 0.302) + 20
        u, jac = _newton_polish(N, u_approx, dps)
        with mpmath.workdps(dps):
            Y = jac ** -1
        enclosure = _krawczyk(N, u, Y, internal)
        if enclosure is None:
            continue
        out = tuple(iv.with_precision(prec) for iv in enclosure)
        bound = mpfr(2) ** (8 - prec)
        if all(iv.width <= bound for iv in out):
            return out
    raise PrecisionTooLow(
        f"could not certify the N={N} filter at {prec} bits; raise the precision"
    )


def _krawczyk(N: int, u, Y, prec: int):
    F, J = _residual_system(N)
    L = 2 * N
    zero = Interval(0, 0, prec)
    two = Interval(2, 2, prec)
    xt = [Interval(_to_mpfr(v, prec, False), _to_mpfr(v, prec, True), prec) for v in u]
    Ym = [[_to_mpfr(Y[i, j], prec, None) for j in range(L)] for i in range(L)]
    fx = F(xt, zero, two)
    yf = [_dot_point(Ym[i], fx, zero) for i in range(L)]
    r0 = max(max(abs(y.lo), abs(y.hi)) for y in yf)
    r = max(r0 * 16, mpfr(2) ** (-prec + 16))
    for _ in range(6):
        X = [x + Interval(-r, r, prec) for x in xt]
        jx = J(X, zero)
        dx = [Interval(-r, r, prec) + (x - x) for x in xt]
        # (I - Y J(X)) (X - xt)
        yj = [[_dot_point(Ym[i], [jx[k][j] for k in range(L)], zero) for j in range(L)] for i in range(L)]
        K = []
        ok = True
        for i in range(L):
            acc = zero
            for j in range(L):
                m = (1 if i == j else 0) - yj[i][j]
                acc = acc + m * dx[j]
            ki = xt[i] - yf[i] + acc
            K.append(ki)
            if not (X[i].lo < ki.lo and ki.hi < X[i].hi):
                ok = False
        if ok:
            return K
        r *= 64
    return None


def _dot_point(row, ivs, zero):
    acc = zero
    for a, b in zip(row, ivs):
        if a:
            acc = acc + b * Interval(a, a, zero.prec)
    return acc


def _to_mpfr(v, prec: int, up):
    """mpmath value -> mpfr, rounded down/up (or to nearest if ``up`` is None)."""
    if not isinstance(v, mpmath.mpf):
        v = mpmath.mpf(v)
    sign, man, exp, _ = v._mpf_
    q = Fraction((-1) ** sign * int(man)) * (Fraction(2) ** int(exp))
    iv = Interval(q, q, prec)
    return iv.hi if up else iv.lo


# ---------------------------------------------------------------------------
# public constructors


def daubechies_filter(N: int, ctx: PrecisionContext | None = None) -> FilterBank:
    """Extremal-phase Daubechies filter with N vanishing moments."""
    ctx = ctx or PrecisionContext()
    if N < 1:
        raise FilterError("N must be >= 1")
    if N == 1:
        one = Interval(1, 1, ctx)
        return FilterBank("daubechies", 1, 1, (one, one), ctx.precision_bits)
    dps = int(ctx.precision_bits * 0.302) + 40
    groups = _root_groups(N, dps)
    u = _filter_from_choice(N, groups, (False,) * len(groups), dps)
    return FilterBank("daubechies", N, N, certify_filter(N, u, ctx), ctx.precision_bits)


def symlet_filter(N: int, ctx: PrecisionContext | None = None, convention: str = "phase") -> FilterBank:
    """Least-asymmetric filter.

    ``convention="phase"`` runs the exhaustive phase-linearity search;
    ``"reference"`` uses the flip pattern of the usual published tables
    (available for N <= 20).
    """
    ctx = ctx or PrecisionContext()
    if N < 4:
        raise FilterError("symlets are defined here for N >= 4")
    dps = int(ctx.precision_bits * 0.302) + 40
    if convention == "phase":
        flips = least_asymmetric_choice(N)
    elif convention == "reference":
        if N not in REFERENCE_SYMLET_FLIPS:
            raise FilterError(f"no reference symlet pattern for N={N}")
        flips = tuple(ch == "1" for ch in REFERENCE_SYMLET_FLIPS[N])
    else:
        raise FilterError(f"unknown symlet convention {convention!r}")
    groups = _root_groups(N, dps)
    u = _filter_from_choice(N, groups, flips, dps)
    return FilterBank("symlet", N, N, certify_filter(N, u, ctx), ctx.precision_bits,
                      notes=("root flips: " + "".join("1" if f else "0" for f in flips),))


def load_filter(path: str | Path, ctx: PrecisionContext | None = None) -> FilterBank:
    """Read ``value radius`` lines; check normalisation; infer vanishing moments."""
    ctx = ctx or PrecisionContext()
    coeffs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 1:
            parts.append("0")
        if len(parts) != 2:
            raise FilterError(f"{path}:{lineno}: expected 'value radius', got {raw!r}")
        try:
            coeffs.append(Interval.from_decimal(parts[0], parts[1], ctx))
        except (ValueError, ArithmeticError) as exc:
            raise FilterError(f"{path}:{lineno}: {exc}") from None
    if not coeffs:
        raise FilterError(f"{path}: no coefficients")
    if len(coeffs) % 2:
        raise FilterError(f"{path}: odd number of coefficients ({len(coeffs)}); need 2K")
    K = len(coeffs) // 2
    bank = FilterBank("custom", 0, K, tuple(coeffs), ctx.precision_bits)
    even, odd = bank.parity_sums()
    if not even.contains(1):
        raise FilterError(f"{path}: sum of even-indexed coefficients {even!r} does not contain 1")
    if not odd.contains(1):
        raise FilterError(f"{path}: sum of odd-indexed coefficients {odd!r} does not contain 1")
    N = bank.vanishing_moments()
    if N == 0:
        raise FilterError(f"{path}: moment sum_k (-1)^k u_k does not contain 0")
    return FilterBank("custom", N, K, tuple(coeffs), ctx.precision_bits,
                      notes=(f"loaded from {Path(path).name}",))


def make_filter(family: str, N: int | None = None, ctx: PrecisionContext | None = None,
                symlet_convention: str = "phase") -> FilterBank:
    """Dispatch on ``daubechies`` / ``symlet`` / ``custom:<path>``."""
    if family.startswith("custom:"):
        return load_filter(family.split(":", 1)[1], ctx)
    if family in ("daubechies", "db"):
        return daubechies_filter(N, ctx)
    if family in ("symlet", "sym"):
        return symlet_filter(N, ctx, symlet_convention)
    raise FilterError(f"unknown family {family!r}")


def format_filter(bank: FilterBank, digits: int = 40) -> str:
    """Render a bank in the ``value radius`` file format (outward-safe)."""
    lines = [f"# {bank.family} N={bank.N} K={bank.K} precision={bank.precision_bits}"]
    for u in bank.u0:
        lo = Fraction(*u.lo.as_integer_ratio())
        hi = Fraction(*u.hi.as_integer_ratio())
        mid = (lo + hi) / 2
        scale = 10 ** digits
        m = Fraction(round(mid * scale), scale)
        r = max(hi - m, m - lo)
        rr = Fraction(-((-r.numerator * scale) // r.denominator), scale) + Fraction(1, scale)
        lines.append(f"{_fixed(m, digits)} {_fixed(rr, digits)}")
    return "\n".join(lines) + "\n"


def _fixed(q: Fraction, digits: int) -> str:
    n = q * 10 ** digits
    assert n.denominator == 1
    n = n.numerator
    sign = "-" if n < 0 else ""
    s = str(abs(n)).rjust(digits + 1, "0")
    return f"{sign}{s[:-digits]}.{s[-digits:]}"
