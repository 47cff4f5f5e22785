"""Monte Carlo for the sup of X(t) = sigma_bar^-1 sum_k phi(t - k) Z_k on [0, 2^j).

Paths are evaluated on the grid t = i + s 2^-m as a batched matrix product of
sliding windows of the Z_k with a (2K-1) x 2^m table of phi values taken from
cascade cell midpoints.  Each replicate draws from its own counter-based
stream (Philox keyed by (seed, replicate)), so any subset of replicates can
be regenerated independently of batching or ordering.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from .asymptotics import CriticalQuery, a_of, b_of, normalized_threshold
from .cascade import TorusWindow, build_ladders, certify
from .filters import FilterBank, make_filter
from .mpinterval import Interval, PrecisionContext

SIM_BITS = 128


@dataclass(frozen=True)
class SimulationConfig:
    family: str = "daubechies"
    N: int = 8
    j: int = 10
    grid_depth: int = 5
    reps: int = 20000
    seed: int = 42
    gammas: tuple = (0.05, 0.1, 0.2)
    batch: int = 128
    deriv_level: int = 12
    value_level: int = 14
    symlet_convention: str = "phase"

    def __post_init__(self):
        if self.j < 0 or self.grid_depth < 0 or self.reps < 1:
            raise ValueError("need j >= 0, grid_depth >= 0, reps >= 1")
        if any(not 0 < g < 1 for g in self.gammas):
            raise ValueError("gammas must lie in (0, 1)")


@dataclass
class ProcessModel:
    """Everything needed to draw paths: the phi table and the constants."""

    K: int
    grid_depth: int
    phi: np.ndarray  # (2K-1, 2^m): phi(s 2^-m + m' - (K-1)) at row m', column s
    sigma_bar_sq: Interval
    upsilon: Interval | None
    value_error: float  # |table - phi| bound per entry
    dphi_sum: float  # sup_t sum_k |phi'(t - k)| (upper bound), inf if unavailable
    verified: bool

    @property
    def sigma_bar(self) -> float:
        return math.sqrt(float(self.sigma_bar_sq.mid))


def _phi_table(bank: FilterBank, m: int, bits: int, level: int):
    """phi at the grid points s 2^-m, read off the level-``level`` cascade cell
    whose left end is the grid point (level >= m)."""
    level = max(level, m)
    lads = build_ladders(bank, (0, 1), bits)
    full = TorusWindow.whole(level)
    for lad in lads.values():
        lad.run_to(level, full)
    cert = certify(lads[0], lads[1], level, full)
    K = bank.K
    idx = np.arange((1 << m) * (2 * K - 1), dtype=np.int64) << (level - m)
    vals = lads[0].f(level, idx)
    mids = np.array([float(Fraction(int(v), 1 << bits)) for v in vals.mid])
    rad = max(float(Fraction(int(r), 1 << bits)) for r in vals.rad) if len(vals) else 0.0
    table = mids.reshape(2 * K - 1, 1 << m)
    err = float(cert.eps.hi) + rad + 4 * np.finfo(float).eps * float(np.abs(mids).max())
    return table, err


def _dphi_sum_bound(bank: FilterBank, level: int, bits: int) -> float:
    if bank.K == 1:
        return 0.0  # Haar: constant between integers, and the grid contains the integers
    lads = build_ladders(bank, (1, 2), bits)
    full = TorusWindow.whole(level)
    for lad in lads.values():
        lad.run_to(level, full)
    cert = certify(lads[1], lads[2], level, full)
    if not np.isfinite(float(cert.eps.hi)):
        return math.inf
    K = bank.K
    idx = np.arange((1 << level) * (2 * K - 1), dtype=np.int64)
    ub = lads[1].f(level, idx).abs_upper()
    tot = np.zeros(1 << level, dtype=object)
    for m in range(2 * K - 1):
        tot = tot + ub[m << level:(m + 1) << level]
    s = Fraction(int(tot.max()), 1 << bits) + (2 * K - 1) * Fraction(*cert.eps.hi.as_integer_ratio())
    return float(s) * (1 + 1e-12)


def build_model(cfg: SimulationConfig, constants: tuple | None = None, bank: FilterBank | None = None,
                ctx: PrecisionContext | None = None) -> ProcessModel:
    """Precompute the phi table; ``constants=(sigma_bar_sq, upsilon)`` skips verification."""
    ctx = ctx or PrecisionContext(SIM_BITS)
    bank = bank or make_filter(cfg.family, cfg.N, ctx, cfg.symlet_convention)
    verified = True
    if bank.K == 1:
        sb, ups = Interval(1, 1, 64), Interval(0, 0, 64)
        verified = False
    elif constants is not None:
        sb, ups = constants
        sb = sb if isinstance(sb, Interval) else Interval(Fraction(sb), Fraction(sb), 64)
        ups = ups if isinstance(ups, Interval) else Interval(Fraction(ups), Fraction(ups), 64)
    else:
        from .verify import verify_assumption

        rep = verify_assumption(bank, target_width=1e-6)
        sb, ups, verified = rep.sigma_bar_sq, rep.upsilon, rep.verified
    table, err = _phi_table(bank, cfg.grid_depth, ctx.precision_bits, cfg.value_level)
    dsum = _dphi_sum_bound(bank, max(cfg.deriv_level, cfg.grid_depth), ctx.precision_bits)
    return ProcessModel(bank.K, cfg.grid_depth, table, sb, ups, err, dsum, verified)


def _rep_normals(seed: int, rep: int, n: int) -> np.ndarray:
    bg = np.random.Philox(key=np.array([seed & (2**64 - 1), rep], dtype=np.uint64))
    return np.random.Generator(bg).standard_normal(n)


def draw_z(cfg: SimulationConfig, model: ProcessModel, reps) -> np.ndarray:
    n = (1 << cfg.j) + 2 * model.K - 2
    return np.stack([_rep_normals(cfg.seed, int(r), n) for r in reps])


def paths_from_z(Z: np.ndarray, model: ProcessModel, j: int) -> np.ndarray:
    """X on the grid: shape (reps, 2^j, 2^m); entry [r, i, s] is X(i + s 2^-m)."""
    K = model.K
    W = sliding_window_view(Z, 2 * K - 1, axis=1)[:, : 1 << j, ::-1]  # Z_{i+K-1-m'}, m' = 0..2K-2
    W = np.ascontiguousarray(W)
    X = W.reshape(-1, 2 * K - 1) @ model.phi
    return X.reshape(len(Z), 1 << j, -1) / model.sigma_bar


def simulate_sups(cfg: SimulationConfig, model: ProcessModel, reps=None) -> tuple[np.ndarray, np.ndarray]:
    """Grid sup of |X| and max |Z| for each replicate."""
    reps = np.arange(cfg.reps) if reps is None else np.asarray(reps)
    sups = np.empty(len(reps))
    zmax = np.empty(len(reps))
    for s in range(0, len(reps), cfg.batch):
        chunk = reps[s:s + cfg.batch]
        Z = draw_z(cfg, model, chunk)
        X = paths_from_z(Z, model, cfg.j)
        sups[s:s + len(chunk)] = np.abs(X).reshape(len(chunk), -1).max(axis=1)
        zmax[s:s + len(chunk)] = np.abs(Z).max(axis=1)
    return sups, zmax


def simulate_sup(cfg: SimulationConfig, rep: int, model: ProcessModel | None = None) -> float:
    """Grid maximum of |X| over [0, 2^j) for one replicate."""
    model = model or build_model(cfg)
    return float(simulate_sups(cfg, model, [rep])[0][0])


def grid_variance(cfg: SimulationConfig, model: ProcessModel, reps=None) -> tuple[np.ndarray, np.ndarray]:
    """Sample second moment of X at each grid phase s (pooled over i) and the
    exact value sum_m' phi^2 / sigma_bar^2 from the table."""
    reps = np.arange(min(cfg.reps, 2000)) if reps is None else np.asarray(reps)
    acc = np.zeros(1 << model.grid_depth)
    count = 0
    for s in range(0, len(reps), cfg.batch):
        chunk = reps[s:s + cfg.batch]
        X = paths_from_z(draw_z(cfg, model, chunk), model, cfg.j)
        acc += (X ** 2).sum(axis=(0, 1))
        count += X.shape[0] * X.shape[1]
    exact = (model.phi ** 2).sum(axis=0) / model.sigma_bar ** 2
    return acc / count, exact


@dataclass
class GammaResult:
    gamma: float
    threshold: float
    exceed: int
    p_hat: float
    ratio: float
    stderr: float
    ci999: tuple


@dataclass
class SimulationReport:
    config: dict
    sigma_bar_sq: tuple
    upsilon: tuple
    constants_verified: bool
    per_gamma: list
    ks_distance: float
    ks_pvalue: float
    grid_sup_bias_bound: float
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_gamma"] = [asdict(g) for g in self.per_gamma]
        return d


def binomial_ci(k: int, n: int, level: float = 0.999) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def exceedance(sups: np.ndarray, u: float) -> tuple[int, float]:
    k = int(np.count_nonzero(sups > u))
    return k, k / len(sups)


def mc_exceedance(cfg: SimulationConfig, model: ProcessModel | None = None,
                  sups: np.ndarray | None = None, zmax: np.ndarray | None = None) -> SimulationReport:
    model = model or build_model(cfg)
    if sups is None:
        sups, zmax = simulate_sups(cfg, model)
    warn = []
    if cfg.reps < 100 / min(cfg.gammas):
        warn.append(f"reps={cfg.reps} below 100/min(gamma)={100 / min(cfg.gammas):.0f}")
    if not model.verified:
        warn.append("process constants not certified; thresholds use upsilon as given")
    ups = model.upsilon if model.upsilon is not None else 0.0
    res = []
    for g in sorted(cfg.gammas):
        u = normalized_threshold(CriticalQuery(max(cfg.j, 1), g), ups)
        k, p = exceedance(sups, u)
        res.append(GammaResult(g, u, k, p, p / g, math.sqrt(max(p * (1 - p), 1e-300) / len(sups)),
                               binomial_ci(k, len(sups))))
    j = max(cfg.j, 1)
    stat = a_of(j) * (sups - b_of(j, ups))
    ks = stats.kstest(stat, "gumbel_r")
    bias = (model.dphi_sum * 2.0 ** (-cfg.grid_depth - 1) + (2 * model.K - 1) * model.value_error) \
        * float(zmax.max()) / model.sigma_bar
    lo, hi = model.sigma_bar_sq.to_decimal(12)
    ulo, uhi = (model.upsilon.to_decimal(12) if model.upsilon is not None else ("nan", "nan"))
    return SimulationReport(
        config=asdict(cfg), sigma_bar_sq=(lo, hi), upsilon=(ulo, uhi),
        constants_verified=model.verified, per_gamma=res,
        ks_distance=float(ks.statistic), ks_pvalue=float(ks.pvalue),
        grid_sup_bias_bound=float(bias), warnings=warn,
    )


def haar_exact_exceedance(j: int, u: float, prec: int = 128) -> Interval:
    """Enclosure of 1 - (2 Phi(u) - 1)^(2^j) = 1 - (1 - erfc(u/sqrt 2))^(2^j)."""
    if u < 0:
        raise ValueError("u must be >= 0")
    uu = Interval(Fraction(u), Fraction(u), prec)
    inner = 1 - (uu / Interval(2, 2, prec).sqrt()).erfc()  # 2 Phi(u) - 1, in [0, 1)
    inner = Interval(max(inner.lo, 0), min(inner.hi, 1), prec)
    p = inner
    for _ in range(j):  # (.)^(2^j) by repeated squaring
        p = p.sqr()
    return 1 - p


# ---------------------------------------------------------------------------
# change-of-basis kernel identity


@dataclass
class KernelCheck:
    deviation: float
    budget: float
    npoints: int
    far_max: float = 0.0  # max |single-level kernel| over pairs with |s - t| >= (2K-1) 2^-j


def _phi_values_table(bank: FilterBank, level: int, bits: int):
    lads = build_ladders(bank, (0, 1), bits)
    full = TorusWindow.whole(level)
    for lad in lads.values():
        lad.run_to(level, full)
    cert = certify(lads[0], lads[1], level, full)
    idx = np.arange((1 << level) * (2 * bank.K - 1), dtype=np.int64)
    vals = lads[0].f(level, idx)
    mids = np.array([float(Fraction(int(v), 1 << bits)) for v in vals.mid])
    rad = max(float(Fraction(int(r), 1 << bits)) for r in vals.rad)
    return mids, float(cert.eps.hi) + rad + 1e-15


def kernel_identity_check(bank: FilterBank, j0: int, j: int, grid_depth: int,
                          cascade_level: int | None = None, span: float = 1.0) -> KernelCheck:
    """Compare sum_k phi_{j0,k}(s) phi_{j0,k}(t) + sum_{j0<=l<j} sum_k psi_{l,k}(s) psi_{l,k}(t)
    with sum_k phi_{j,k}(s) phi_{j,k}(t) on the grid 2^-grid_depth Z of [0, span)^2.

    psi(x) = sum_n (-1)^n u_{K-n} phi(2x - n) for n = 1-K..K.
    """
    if grid_depth < j:
        raise ValueError("grid_depth must be >= j")
    K = bank.K
    c = max(cascade_level or 0, grid_depth + 1)
    bits = max(bank.precision_bits, 96)
    table, err = _phi_values_table(bank, c, bits)
    u = bank.midpoints()
    scale = 1 << c

    def phi(x):  # x: array of dyadic rationals with denominator dividing 2^c (as floats)
        idx = np.rint((x + K - 1) * scale).astype(np.int64)
        out = np.zeros(x.shape)
        ok = (idx >= 0) & (idx < len(table))
        out[ok] = table[idx[ok]]
        return out

    def psi(x):
        acc = np.zeros(x.shape)
        for n in range(1 - K, K + 1):
            acc += (-1) ** (n % 2) * u[K - n] * phi(2 * x - n)
        return acc

    pts = np.arange(int(span * (1 << grid_depth))) / (1 << grid_depth)

    def kernel(level, fn):
        ks = np.arange(math.floor(-K - 1), math.ceil(span * (1 << level)) + K + 1)
        V = fn((1 << level) * pts[:, None] - ks[None, :]) * 2.0 ** (level / 2)
        return V @ V.T

    lhs = kernel(j0, phi)
    for lvl in range(j0, j):
        lhs = lhs + kernel(lvl, psi)
    rhs = kernel(j, phi)
    dev = float(np.abs(lhs - rhs).max())
    M = float(np.abs(table).max()) + err
    Epsi = float(np.abs(u).sum()) * err
    Mpsi = float(np.abs(u).sum()) * M
    budget = 2.0 ** j0 * (2 * K - 1) * (2 * M * err + err ** 2)
    for lvl in range(j0, j):
        budget += 2.0 ** lvl * (2 * K) * (2 * Mpsi * Epsi + Epsi ** 2)
    budget += 2.0 ** j * (2 * K - 1) * (2 * M * err + err ** 2)
    far = np.abs(pts[:, None] - pts[None, :]) >= (2 * K - 1) * 2.0 ** -j
    far_max = float(np.abs(rhs[far]).max()) if far.any() else 0.0
    return KernelCheck(dev, budget, len(pts) ** 2, far_max)
