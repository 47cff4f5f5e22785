"""Acceptance checks.  Each test prints one ``[PASS]``/``[FAIL]`` line.

Tolerances:
  constants table  width <= 1e-6, reference 6-dp values within +-5e-7
  Haar rejection   verified is false, runtime < 1 s
  containment      zero violations, cascade levels j = 4..10, dyadics of depth <= 6
  locality         bit-identical balls, 20 random windows over 3 families
  identities       torus mean contains 1; realised norm deviation <= 1e-8 at j = 12;
                   partition of unity cellwise; kernel deviation <= 10 * eps budget
  Haar MC          99.9% exact binomial CI, reps 50 000, runtime < 60 s
  Gumbel trend     ratios in [0.6, 1.4] at j = 10; max|log ratio| j=12 <= j=6;
                   KS(j=12) < KS(j=6); db8, reps 20 000, seed 42
  closed forms     x(1 - 1/e) enclosure contains 0; Gumbel identity to 1e-12;
                   critical value monotone in gamma and j
"""

import math
import random
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from oracles import EigenOracle, db2_phi_std, dyadics
from sbrwave.asymptotics import BandConstants, CriticalQuery, critical_value, gumbel_tail, x_iv, x_of
from sbrwave.cascade import CascadeLadder, TorusWindow, build_ladders, cascade_f, derive_filter, window_indices
from sbrwave.cli import REFERENCE_CONSTANTS
from sbrwave.mpinterval import Interval
from sbrwave.simulate import (
    SimulationConfig,
    binomial_ci,
    build_model,
    haar_exact_exceedance,
    kernel_identity_check,
    mc_exceedance,
    simulate_sups,
)
from sbrwave.verify import sigma_enclosure, verify_assumption


def _line(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def _q(x) -> Fraction:
    return Fraction(*x.as_integer_ratio())


@pytest.mark.slow
def test_constants_table(capsys):
    tol = Fraction(5, 10 ** 7)
    bad, worst_width, total = [], 0.0, 0.0
    for family in ("daubechies", "symlet"):
        for N in range(6, 11):
            rep = verify_assumption(family, N, target_width=1e-6)
            total += rep.seconds
            s_ref, u_ref = (Fraction(str(v)) for v in REFERENCE_CONSTANTS[family][N])
            ok = rep.verified
            for iv, ref in ((rep.sigma_bar_sq, s_ref), (rep.upsilon, u_ref)):
                w = float(iv.hi - iv.lo)
                worst_width = max(worst_width, w)
                ok &= w <= 1e-6 and _q(iv.lo) - tol <= ref <= _q(iv.hi) + tol
            if not ok:
                bad.append(f"{family}{N}")
    ok = not bad
    _line(capsys, "constants table (db/sym N=6..10)", ok,
          f"mismatches={bad or 'none'} max width={worst_width:.2e} total {total:.0f}s")
    assert ok


def test_haar_rejection(capsys):
    t = time.perf_counter()
    rep = verify_assumption("daubechies", 1)
    dt = time.perf_counter() - t
    ok = (not rep.verified) and dt < 1.0
    _line(capsys, "Haar rejection", ok, f"verified={rep.verified} in {dt:.2f}s ({rep.reason})")
    assert ok


def test_certified_containment(capsys, get_bank):
    # phi for db2 against exact Q(sqrt 3) values
    bank = get_bank("daubechies", 2)
    lads = build_ladders(bank, (0, 1))
    for lad in lads.values():
        lad.run_to(10, TorusWindow.whole(10))
    exact = {x: db2_phi_std(x + 1).interval(256) for x in dyadics(2, 6) if x < 2}
    viol, checks = 0, 0
    for j in range(4, 11):
        enc = cascade_f(bank, 0, j, ladders=lads)
        for x, ex in exact.items():
            box = enc.enclose(x)
            viol += not (box.lo <= ex.lo and ex.hi <= box.hi)
            checks += 1
    # db2 is not differentiable, so phi' is checked on the C^1 member db4 (eigenvector oracle)
    bank4 = get_bank("daubechies", 4)
    oracle = EigenOracle([mpmath.mpf(str(u.mid)) for u in bank4.u0], 1)
    lads4 = build_ladders(bank4, (1, 2))
    for lad in lads4.values():
        lad.run_to(10, TorusWindow.whole(10))
    dchecks = 0
    for j in range(4, 11):
        enc = cascade_f(bank4, 1, j, ladders=lads4, strict=False)
        if not math.isfinite(float(enc.eps.hi)):
            continue
        for x in dyadics(4, 6):
            if x >= 4:
                continue
            box = enc.enclose(x)
            viol += not (box.lo <= oracle(x) <= box.hi)
            dchecks += 1
    ok = viol == 0 and checks > 0 and dchecks > 0
    _line(capsys, "certified-bound containment", ok,
          f"{viol} violations in {checks} db2 phi + {dchecks} db4 phi' checks, j=4..10")
    assert ok


def test_locality(capsys, get_bank):
    fams = [("daubechies", 3), ("daubechies", 6), ("symlet", 5)]
    mism = 0
    for seed in range(20):
        rng = random.Random(1000 + seed)
        family, N = fams[seed % 3]
        bank = get_bank(family, N, 128)
        n = rng.randint(0, 2)
        j = rng.randint(4, 10)
        a = rng.randrange(1 << j)
        win = TorusWindow(j, a, a + rng.randrange(max(1, (1 << j) // 8)))
        filt = derive_filter(bank, n)
        full, part = CascadeLadder(filt, 128), CascadeLadder(filt, 128)
        full.run_to(j, TorusWindow.whole(j))
        part.run_to(j, win)
        need = window_indices(j, win.a, win.b, j, bank.K)
        idx = np.concatenate([np.arange(s, e + 1) for s, e in need.segments()]).astype(np.int64)
        got, found = part.levels[j].get(idx)
        ref, _ = full.levels[j].get(idx)
        mism += (not found.all()) or list(got.mid) != list(ref.mid) or list(got.rad) != list(ref.rad)
    ok = mism == 0
    _line(capsys, "locality equivalence", ok, f"{20 - mism}/20 windows bit-identical")
    assert ok


def test_structural_identities(capsys, get_bank):
    bank = get_bank("daubechies", 6)
    j = 12
    lads = build_ladders(bank, (0, 1, 2, 3))
    for lad in lads.values():
        lad.run_to(j, TorusWindow.whole(j))
    encs = [cascade_f(bank, n, j, ladders=lads, strict=False) for n in (0, 1, 2)]
    se = sigma_enclosure(*encs)
    mean = se.torus_mean()
    enc = encs[0]
    cells = np.arange(1 << j)
    tot, pou_ok = 0, True
    acc = None
    for idx in enc.shift_indices(cells):
        v = enc.values(idx)
        tot += sum(int(m) * int(m) for m in v.mid)
        acc = v if acc is None else acc + v
    norm_dev = abs(float(Fraction(tot, (1 << (2 * enc.ladder.bits)) * len(cells)) - 1))
    e = float(enc.eps.hi) * (2 * bank.K - 1)
    for i in range(len(cells)):
        iv = acc.interval(i, 256)
        pou_ok &= float(iv.lo) - e <= 1 <= float(iv.hi) + e
    kc = kernel_identity_check(get_bank("daubechies", 6, 128), 3, 6, 8, cascade_level=12)
    ok = mean.contains(1) and norm_dev <= 1e-8 and pou_ok and kc.deviation <= 10 * kc.budget
    _line(capsys, "structural identities", ok,
          f"torus mean [{float(mean.lo):.6f}, {float(mean.hi):.6f}] norm dev {norm_dev:.1e}; "
          f"partition of unity {'ok' if pou_ok else 'violated'}; kernel dev {kc.deviation:.2e} "
          f"<= 10*{kc.budget:.2e}")
    assert ok


def test_haar_exact_oracle_mc(capsys):
    t = time.perf_counter()
    outside = []
    for j in (3, 6, 10):
        cfg = SimulationConfig(N=1, j=j, grid_depth=0, reps=50_000, seed=2024, batch=512)
        sups, _ = simulate_sups(cfg, build_model(cfg))
        for u in (1.0, 2.0, 3.0):
            k = int((sups > u).sum())
            lo, hi = binomial_ci(k, len(sups), 0.999)
            p = haar_exact_exceedance(j, u)
            if not (lo <= float(p.hi) and float(p.lo) <= hi):
                outside.append((j, u, k / len(sups), float(p.mid)))
    dt = time.perf_counter() - t
    ok = not outside and dt < 60
    _line(capsys, "Haar exact-oracle Monte Carlo", ok, f"{9 - len(outside)}/9 inside 99.9% CI in {dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def db8_runs():
    base = dict(family="daubechies", N=8, grid_depth=5, reps=20_000, seed=42, gammas=(0.05, 0.1, 0.2))
    model = build_model(SimulationConfig(j=6, **base))
    return {j: mc_exceedance(SimulationConfig(j=j, **base), model) for j in (6, 10, 12)}


@pytest.mark.slow
def test_gumbel_trend(capsys, db8_runs):
    r6, r10, r12 = db8_runs[6], db8_runs[10], db8_runs[12]
    ratios10 = [g.ratio for g in r10.per_gamma]
    band = all(0.6 <= r <= 1.4 for r in ratios10)

    def maxlog(r):
        return max(abs(math.log(g.ratio)) for g in r.per_gamma)

    trend = maxlog(r12) <= maxlog(r6)
    ks = r12.ks_distance < r6.ks_distance
    ok = band and trend and ks
    _line(capsys, "Gumbel trend (db8)", ok,
          f"j=10 ratios {[round(r, 3) for r in ratios10]} ({'ok' if band else 'out of band'}); "
          f"max|log ratio| j=6 {maxlog(r6):.3f} -> j=12 {maxlog(r12):.3f} ({'ok' if trend else 'worse'}); "
          f"KS j=6 {r6.ks_distance:.4f} -> j=12 {r12.ks_distance:.4f} ({'decreases' if ks else 'does not decrease'})")
    assert ok


def test_closed_forms(capsys):
    x0 = x_iv(1 - Interval(-1, -1, 256).exp(), 256)
    exact_zero = x0.contains(0)
    rng = random.Random(99)
    ident = max(abs(gumbel_tail(x_of(g)) - g) for g in (rng.uniform(1e-6, 1 - 1e-6) for _ in range(100)))
    c = BandConstants(1.250928, 0.266316, 1.0)
    gammas = [0.01, 0.05, 0.1, 0.2, 0.5]
    js = [2, 4, 6, 8, 10, 12, 16]
    grid = [[critical_value(CriticalQuery(j, g), c) for g in gammas] for j in js]
    mono_g = all(row[i] > row[i + 1] for row in grid for i in range(len(gammas) - 1))
    mono_j = all(grid[k][i] < grid[k + 1][i] for k in range(len(js) - 1) for i in range(len(gammas)))
    ok = exact_zero and ident <= 1e-12 and mono_g and mono_j
    _line(capsys, "closed-form constants", ok,
          f"x(1-1/e) encl. width {float(x0.hi - x0.lo):.1e} contains 0: {exact_zero}; "
          f"max Gumbel identity error {ident:.1e}; monotone gamma {mono_g}, j {mono_j}")
    assert ok
