"""Localisation loop, sigma^2 enclosures and the upsilon formula."""

import json
import time
from fractions import Fraction

import numpy as np
import pytest

from sbrwave.cascade import TorusWindow, build_ladders, cascade_f
from sbrwave.mpinterval import BallArray, Interval, PrecisionContext
from sbrwave.verify import (
    SigmaEnclosure,
    candidate_interval,
    sigma_enclosure,
    upsilon_direct,
    upsilon_enclosure,
    verify_assumption,
)


def test_haar_rejected_quickly():
    t = time.perf_counter()
    rep = verify_assumption("daubechies", 1)
    assert not rep.verified
    assert time.perf_counter() - t < 1.0
    assert rep.reason


def test_haar_rejection_is_deterministic():
    a = verify_assumption("daubechies", 1).to_dict()
    b = verify_assumption("daubechies", 1).to_dict()
    assert a == b


@pytest.fixture(scope="module")
def db6_sigma(get_bank):
    bank = get_bank("daubechies", 6)
    j = 12
    lads = build_ladders(bank, (0, 1, 2, 3))
    for lad in lads.values():
        lad.run_to(j, TorusWindow.whole(j))
    encs = [cascade_f(bank, n, j, ladders=lads, strict=False) for n in (0, 1, 2)]
    return encs, sigma_enclosure(*encs)


def test_torus_mean_contains_one(db6_sigma):
    encs, se = db6_sigma
    m = se.torus_mean()
    assert m.contains(1)
    # certified width is the accumulated cascade error of the s0 cells
    K = encs[0].K
    eps = float(encs[0].eps.hi)
    phimax = encs[0].ladder.f_abs_max(12, TorusWindow.whole(12))
    assert float(m.hi - m.lo) <= 2 * (2 * K - 1) * (2 * phimax * eps + eps ** 2) * (1 + 1e-9)


def test_cascade_preserves_l2_norm(db6_sigma):
    """Mean of sum_k f_j(t - k)^2 over the torus, from the cascade values alone."""
    encs, se = db6_sigma
    enc = encs[0]
    cells = np.arange(1 << enc.j)
    tot = 0
    for idx in enc.shift_indices(cells):
        tot += sum(int(m) * int(m) for m in enc.values(idx).mid)
    dev = Fraction(tot, (1 << (2 * enc.ladder.bits)) * len(cells)) - 1
    assert abs(float(dev)) <= 1e-8


def test_s0_cells_nonnegative(db6_sigma):
    _, se = db6_sigma
    lo, _ = se.s0_bounds()
    assert (lo >= 0).all()


def _fake_sigma(values, j=4, bits=64):
    n = 1 << j
    assert len(values) == n
    mid = [int(Fraction(v) * (1 << bits)) for v in values]
    s0 = BallArray(mid, [1] * n, bits)
    w = TorusWindow.whole(j)
    return SigmaEnclosure(j, w, w.cells(), bits, s0, None, None, None)


def test_candidate_interval_wraps_across_seam():
    vals = [Fraction(1)] * 16
    vals[15] = Fraction(3)
    vals[0] = Fraction(3)
    vals[1] = Fraction(3)
    arc = candidate_interval(_fake_sigma(vals))
    assert (arc.a, arc.b) == (15, 17)
    assert list(arc.cells()) == [15, 0, 1]
    assert arc.contains_point(Fraction(0)) and arc.contains_point(Fraction(31, 32))


def test_candidate_interval_inside():
    vals = [Fraction(1)] * 16
    vals[5] = vals[6] = Fraction(2)
    arc = candidate_interval(_fake_sigma(vals))
    assert (arc.a, arc.b) == (5, 6)


@pytest.mark.parametrize("num,den,sb", [((1, 2), (-3, -2), (1.2, 1.3)), ((0.5, 0.5), (-1, -1), (2, 2))])
def test_upsilon_identity(num, den, sb):
    N = Interval(Fraction(num[0]), Fraction(num[1]), 128)
    D = Interval(Fraction(den[0]), Fraction(den[1]), 128)
    S = Interval(Fraction(sb[0]), Fraction(sb[1]), 128)
    direct = upsilon_direct(N, D, S)
    simplified = -(N * 2) / D
    assert direct.overlaps(simplified)
    assert float(direct.lo) <= float(simplified.lo) + 1e-12 and float(simplified.hi) <= float(direct.hi) + 1e-12


def test_upsilon_requires_negative_curvature(db6_sigma):
    _, se = db6_sigma
    from sbrwave.verify import DenominatorNotNegative

    with pytest.raises(DenominatorNotNegative):
        upsilon_enclosure(se)  # over the whole torus sigma'' changes sign


def rep_lo(iv):
    return Fraction(*iv.lo.as_integer_ratio())


def rep_hi(iv):
    return Fraction(*iv.hi.as_integer_ratio())


def test_db6_report_and_precision_doubling():
    rep = verify_assumption("daubechies", 6, ctx=PrecisionContext(64))
    assert rep.verified
    assert rep.precision_bits > 64
    tol = Fraction(5, 10 ** 7)
    for iv, ref in ((rep.sigma_bar_sq, Fraction("1.251716")), (rep.upsilon, Fraction("0.221993"))):
        assert rep_lo(iv) - tol <= ref <= rep_hi(iv) + tol
    assert float(rep.upsilon.hi - rep.upsilon.lo) <= 1e-6
    assert rep.I_final.contains_window(rep.t0_enclosure) or rep.t0_enclosure.contains_window(rep.I_final)
    json.dumps(rep.to_dict(with_history=True), default=str)
