import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from killedwalk.errors import TooFewSurvivors
from killedwalk.estimators import estimate_rho
from killedwalk.limits import (Endpoints, check_c1, check_c2, check_c3, check_c4_endpoint, ks_statistic,
                               rayleigh_cdf)
from killedwalk.mechanisms import build_mechanism, immediate_kill, kemperman
from killedwalk.walk import IncrementLaw

R = IncrementLaw.rademacher()


def rayleigh_quantile(p):
    return np.sqrt(-2.0 * np.log1p(-np.asarray(p)))


def test_rayleigh_cdf_values():
    assert rayleigh_cdf(0.0) == 0.0
    assert rayleigh_cdf(math.sqrt(2 * math.log(2))) == pytest.approx(0.5, abs=1e-15)
    assert 1.0 - rayleigh_cdf(10.0) < 1e-21
    with pytest.raises(ValueError):
        rayleigh_cdf(-0.1)


@settings(max_examples=100)
@given(a=st.floats(0, 50), b=st.floats(0, 50))
def test_rayleigh_cdf_monotone(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= rayleigh_cdf(lo) <= rayleigh_cdf(hi) <= 1.0
    assert rayleigh_cdf(lo) < 1.0 or lo > 8.0


def test_ks_single_median():
    assert ks_statistic([math.sqrt(2 * math.log(2))], rayleigh_cdf) == pytest.approx(0.5)


def test_ks_exact_quantiles():
    m = 1000
    sample = rayleigh_quantile((np.arange(1, m + 1) - 0.5) / m)
    assert ks_statistic(sample, rayleigh_cdf) == pytest.approx(1 / (2 * m), abs=1e-12)


def test_ks_wrong_law():
    # analytic sup gap between uniform(0,1) and Rayleigh CDFs
    grid = np.linspace(0, 6, 600_001)
    gap = np.max(np.abs(np.clip(grid, 0, 1) - rayleigh_cdf(grid)))
    assert gap > 0.1
    u = np.random.default_rng(0).uniform(size=10_000)
    d = ks_statistic(np.sort(u), rayleigh_cdf)
    assert d > 0.1
    assert abs(d - gap) < 2 / math.sqrt(u.size)


def test_ks_matches_scipy():
    x = np.random.default_rng(1).rayleigh(size=777)
    assert ks_statistic(x, rayleigh_cdf) == pytest.approx(stats.kstest(x, rayleigh_cdf).statistic, abs=1e-14)


def test_ks_weighted_equals_repeated_sample():
    vals = np.array([0.3, 1.0, 1.7])
    rep = np.repeat(vals, [1, 3, 2])
    assert ks_statistic(vals, rayleigh_cdf, weights=[1, 3, 2]) == pytest.approx(ks_statistic(rep, rayleigh_cdf))


def test_ks_empty():
    with pytest.raises(ValueError):
        ks_statistic([], rayleigh_cdf)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=50))
def test_ks_invariant_under_monotone_map(sample):
    x = np.sort(np.array(sample))
    d1 = ks_statistic(x, rayleigh_cdf)
    # apply log to sample and compose the cdf with exp
    d2 = ks_statistic(np.log(x), lambda v: rayleigh_cdf(np.exp(v)))
    assert 0.0 <= d1 <= 1.0
    assert d1 == pytest.approx(d2, abs=1e-12)


def test_c1_never_absorb_fails(never):
    rep = check_c1(0, R, never, range(1, 5), 2000, seed=1)
    assert [r[1] for r in rep.table] == [1.0] * 4
    assert rep.fitted["gamma"] == pytest.approx(1.0)
    assert rep.verdict == "fail"


def test_c1_kemperman_staircase():
    q = 0.3
    s = 1 - q
    a = (1 - math.sqrt(1 - s * s)) / s / s  # E[s^(L-1)], L first passage time from -1 to 0
    exact = [a ** (k // 2) for k in range(1, 9)]
    rep = check_c1(0, R, kemperman(q), range(1, 9), 100_000, seed=2)
    for row, p in zip(rep.table, exact):
        k, value, lo, hi, se, _, bound = row
        assert value <= bound + 4 * se
        assert abs(value - p) <= 4 * max(se, 1e-4)
    assert rep.fitted["bound_ok"]
    assert rep.fitted["gamma"] + 2 * rep.fitted["gamma_stderr"] < 1
    # a two-step staircase has r^2 = 484/504 in log space, below the 0.98 threshold
    assert rep.fitted["r2"] == pytest.approx(484 / 504, abs=0.01)


def test_c1_immediate_kill_inconclusive():
    rep = check_c1(0, R, immediate_kill(), range(1, 4), 1000, seed=0)
    assert [r[1] for r in rep.table] == [1.0, 0.0, 0.0]
    assert rep.verdict == "inconclusive"


def test_c2_immediate_kill():
    ns = [2**11, 2**12, 2**13, 2**14]
    rep = check_c2([-1, 0], R, immediate_kill(), ns, mode="dp")
    rows = {(r[0], r[1]): r[2] for r in rep.table}
    assert all(rows[(-1.0, n)] == 0.0 for n in ns)
    assert rows[(0.0, 2**14)] == pytest.approx(math.sqrt(2 / math.pi), rel=0.02)
    assert rep.verdict == "pass"
    mc = check_c2([-1], R, immediate_kill(), [64, 128, 256, 512], 1000, seed=0)
    assert mc.fitted["gap"] == 0.0 and mc.verdict == "pass"


def test_c2_kemperman_negative_start():
    rep = check_c2([-1], R, kemperman(0.3), [256, 512, 1024, 2048], 50_000, seed=3)
    assert rep.table[-1][2] <= 0.01
    dp = check_c2([-1], R, kemperman(0.3), [256, 512, 1024, 2048], mode="dp")
    assert dp.table[-1][2] <= 0.01 and dp.verdict == "pass"


def test_c2_grid_size():
    with pytest.raises(ValueError):
        check_c2([0], R, immediate_kill(), [1, 2, 3], mode="dp")


def test_c3():
    ns = [256, 512, 1024, 2048]
    rep = check_c3(0, R, immediate_kill(), ns, mode="dp")
    assert rep.fitted["inf"] == pytest.approx(math.sqrt(2 / math.pi), rel=0.02)
    assert rep.verdict == "pass"
    gate = build_mechanism({"family": "interval-gate", "interval": [-1, 1]})
    out = check_c3(2, R, gate, ns, 1000, seed=0)
    assert all(r[1] == 0 for r in out.table) and out.verdict == "fail"
    nv = check_c3(0, R, build_mechanism({"family": "never-absorb"}), ns, 500, seed=0)
    assert [r[1] for r in nv.table] == [math.sqrt(n) for n in ns]
    assert nv.verdict == "pass"


def test_c4_dp_kemperman():
    rep = check_c4_endpoint(0, R, kemperman(0.3), 4096, mode="dp")
    assert rep.fitted["rho"] >= 0.99
    assert rep.fitted["ks_nonneg"] <= 0.05
    assert rep.verdict == "pass"


def test_c4_dp_immediate_kill_nonneg_only():
    rep = check_c4_endpoint(0, R, immediate_kill(), 4096, mode="dp")
    assert rep.fitted["rho"] == 1.0
    assert rep.table[1][3] == 0
    assert rep.verdict == "pass"


def test_c4_rayleigh_self_test():
    m = 10_000
    q = rayleigh_quantile((np.arange(1, m + 1) - 0.5) / m)
    rep = check_c4_endpoint(0, R, immediate_kill(), 1, endpoints=Endpoints(q, np.ones(m), m))
    assert rep.fitted["ks_nonneg"] == pytest.approx(1 / (2 * m), abs=1e-12)
    assert rep.verdict == "pass"


def test_c4_too_few_survivors():
    with pytest.raises(TooFewSurvivors):
        check_c4_endpoint(0, R, kemperman(0.3), 4096, survivor_target=10_000, seed=0, max_paths=1000)


def test_c4_sign_split_agrees_with_rho():
    gauss = IncrementLaw.gaussian(1.0)
    avoid = build_mechanism({"family": "avoid-sets", "sets": {"0": [[-2, -1]]}})
    rep = check_c4_endpoint(1, gauss, avoid, 1024, survivor_target=5000, seed=4)
    rho = estimate_rho(1, gauss, avoid, 1024, 100_000, seed=9)
    lo, hi = rep.fitted["rho_ci"]
    assert lo <= rho.ci_high and rho.ci_low <= hi
    assert 0.0 < rep.fitted["rho"] < 1.0
