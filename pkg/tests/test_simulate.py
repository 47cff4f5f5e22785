"""Monte Carlo of the limiting process: reproducibility and exact oracles."""

import math

import numpy as np
import pytest
from scipy import stats

from sbrwave.asymptotics import BandConstants, CriticalQuery, critical_value, normalized_threshold
from sbrwave.simulate import (
    SimulationConfig,
    binomial_ci,
    build_model,
    grid_variance,
    haar_exact_exceedance,
    kernel_identity_check,
    mc_exceedance,
    simulate_sup,
    simulate_sups,
)

DB6 = (1.2517159826, 0.2219928)


@pytest.fixture(scope="module")
def db6_model():
    cfg = SimulationConfig(N=6, j=6, grid_depth=4, reps=400, value_level=10, deriv_level=8)
    return cfg, build_model(cfg, constants=DB6)


def test_same_seed_same_sups(db6_model):
    cfg, model = db6_model
    a, _ = simulate_sups(cfg, model)
    b, _ = simulate_sups(cfg, model)
    assert np.array_equal(a, b)


def test_replicate_independent_of_batching(db6_model):
    cfg, model = db6_model
    a, _ = simulate_sups(cfg, model, reps=[17, 3, 250])
    other = SimulationConfig(**{**cfg.__dict__, "batch": 7})
    b, _ = simulate_sups(other, model)
    assert a[0] == b[17] and a[1] == b[3] and a[2] == b[250]
    assert simulate_sup(cfg, 3, model) == a[1]


def test_different_seed_differs(db6_model):
    cfg, model = db6_model
    a, _ = simulate_sups(cfg, model)
    b, _ = simulate_sups(SimulationConfig(**{**cfg.__dict__, "seed": 43}), model)
    assert not np.array_equal(a, b)


def test_haar_exact_exceedance_formula():
    for j, u in [(0, 1.0), (3, 2.0), (6, 3.0)]:
        p = 1 - (2 * stats.norm.cdf(u) - 1) ** (2 ** j)
        iv = haar_exact_exceedance(j, u)
        assert float(iv.lo) <= p * (1 + 1e-12) and p * (1 - 1e-12) <= float(iv.hi)
        assert float(iv.hi - iv.lo) < 1e-25


def test_haar_mc_inside_binomial_ci():
    cfg = SimulationConfig(N=1, j=3, grid_depth=2, reps=20000, seed=5)
    model = build_model(cfg)
    sups, _ = simulate_sups(cfg, model)
    for u in (1.0, 2.0, 3.0):
        k = int((sups > u).sum())
        lo, hi = binomial_ci(k, len(sups))
        p = float(haar_exact_exceedance(cfg.j, u).mid)
        assert lo <= p <= hi


def test_haar_sup_is_max_of_normals():
    cfg = SimulationConfig(N=1, j=2, grid_depth=0, reps=10)
    model = build_model(cfg)
    sups, zmax = simulate_sups(cfg, model)
    assert np.allclose(sups, zmax)


def test_variance_calibration(db6_model):
    cfg, model = db6_model
    emp, exact = grid_variance(cfg, model, reps=np.arange(400))
    assert exact.max() == pytest.approx(1.0, abs=5e-3)
    # 400 reps x 64 positions: relative standard error about sqrt(2 / 25600)
    assert np.allclose(emp, exact, rtol=0.05)


def test_scale_independence():
    q = CriticalQuery(10, 0.1)
    u1 = critical_value(q, BandConstants(1.25, 0.27, 1.0))
    u3 = critical_value(q, BandConstants(1.25, 0.27, 3.0))
    assert u3 == pytest.approx(3 * u1, rel=1e-14)
    # the normalised level, which is what the simulation compares against, is sigma-free
    assert u3 / (3 * math.sqrt(1.25) * 2 ** 5) == pytest.approx(normalized_threshold(q, 0.27), rel=1e-14)


def test_report_fields(db6_model):
    cfg, model = db6_model
    rep = mc_exceedance(cfg, model)
    d = rep.to_dict()
    assert [g["gamma"] for g in d["per_gamma"]] == [0.05, 0.1, 0.2]
    assert any("reps" in w for w in d["warnings"])
    for g in rep.per_gamma:
        assert g.threshold == pytest.approx(normalized_threshold(CriticalQuery(cfg.j, g.gamma), DB6[1]))
        assert g.ci999[0] <= g.p_hat <= g.ci999[1]
    assert math.isfinite(rep.grid_sup_bias_bound)


def test_kernel_identity_haar():
    from sbrwave.filters import make_filter

    chk = kernel_identity_check(make_filter("daubechies", 1), 0, 2, 4)
    assert chk.deviation <= 10 * chk.budget
    assert chk.deviation < 1e-12


def test_kernel_identity_db6_converges(get_bank):
    bank = get_bank("daubechies", 6, 128)
    checks = [kernel_identity_check(bank, 3, 6, 8, cascade_level=c) for c in (10, 12)]
    for chk in checks:
        assert chk.deviation <= 10 * chk.budget
    assert checks[1].deviation < checks[0].deviation / 2


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(gammas=(0.0,))
    with pytest.raises(ValueError):
        SimulationConfig(reps=0)


def test_kernels_vanish_for_separated_points(get_bank):
    from sbrwave.filters import make_filter

    for bank, j in ((make_filter("daubechies", 1), 2), (get_bank("daubechies", 6, 128), 6)):
        chk = kernel_identity_check(bank, 0 if bank.K == 1 else 3, j, 8)
        assert chk.far_max == 0.0


def test_grid_refinement_never_lowers_sup():
    base = dict(N=4, j=4, reps=50, value_level=9, deriv_level=8)
    c4, c5 = SimulationConfig(grid_depth=4, **base), SimulationConfig(grid_depth=5, **base)
    consts = (1.2, 0.2)
    s4, _ = simulate_sups(c4, build_model(c4, constants=consts))
    s5, _ = simulate_sups(c5, build_model(c5, constants=consts))
    assert (s5 >= s4).all()


def test_exceedance_monotone_in_threshold(db6_model):
    cfg, model = db6_model
    sups, _ = simulate_sups(cfg, model)
    ps = [(sups > u).mean() for u in np.linspace(0, 6, 25)]
    assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_variance_within_four_over_sqrt_reps(db6_model):
    cfg, model = db6_model
    reps = 400
    emp, exact = grid_variance(cfg, model, reps=np.arange(reps))
    assert np.abs(emp - exact).max() <= 4 / math.sqrt(reps)


def test_haar_exceedance_edge_cases():
    assert haar_exact_exceedance(5, 0.0).contains(1)
    p = 2 * (1 - stats.norm.cdf(1.3))
    assert float(haar_exact_exceedance(0, 1.3).mid) == pytest.approx(p, rel=1e-12)
    assert float(haar_exact_exceedance(3, 2.0).mid) == pytest.approx(0.311020, abs=5e-7)
