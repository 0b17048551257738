import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from killedwalk.errors import IncompatibleMechanism, TooLargeInstance, ZeroSurvival
from killedwalk.mechanisms import build_mechanism, immediate_kill, kemperman
from killedwalk.oracle import (dp_endpoint_distribution, dp_no_crossing_survival, dp_survival, dp_u,
                               enumerate_small)
from killedwalk.walk import IncrementLaw

R = IncrementLaw.rademacher()
LAZY = IncrementLaw.lattice({-1: 0.25, 0: 0.5, 1: 0.25})
SKEW = IncrementLaw.lattice({-2: "1/3", 1: "2/3"})

MECHS = {
    "never": build_mechanism({"family": "never-absorb"}),
    "kill": immediate_kill(),
    "kem-half": kemperman(0.5),
    "kem-inf": kemperman(0.3, p_inf=0.25),
    "det-2": build_mechanism({"family": "time-below-zero", "u": {"law": "deterministic", "m": 2}}),
    "table": build_mechanism({"family": "time-below-zero",
                              "u": {"law": "table", "pmf": {"0": 0.2, "1": 0.3, "3": 0.3}, "p_inf": 0.2}}),
    "hazard": build_mechanism({"family": "position-hazard", "breakpoints": [-2.5, -1.5], "values": [0.9, 0.5, 0.25]}),
    "avoid": build_mechanism({"family": "avoid-sets", "u_pmf": {"0": 0.5, "1": 0.5},
                              "sets": {"0": [{"lo": -2, "hi": -1, "closed": "left"}], "1": [[-3, -3]]}}),
    "gate": build_mechanism({"family": "interval-gate", "interval": [-1.5, 1.5]}),
    "gate-exempt": build_mechanism({"family": "interval-gate", "interval": [-1.5, 0.5], "exempt_initial_segment": True}),
}


def test_ballot_values_and_enumeration():
    for m in range(1, 11):
        exact = math.comb(2 * m, m) / 4**m
        assert dp_survival(0, R, immediate_kill(), [2 * m])[0] == pytest.approx(exact, abs=1e-12)
    assert enumerate_small(0, R, immediate_kill(), 4) == Fraction(3, 8)
    assert dp_survival(0, R, immediate_kill(), [4]) == [0.375]


def test_geometric_q1_two_steps():
    mech = kemperman(1.0)
    assert enumerate_small(0, R, mech, 2) == Fraction(3, 4)
    assert dp_survival(0, R, mech, [2]) == [0.75]


def test_never_absorb_is_one():
    assert dp_survival(3, R, MECHS["never"], [100]) == [1.0]
    assert enumerate_small(-2, R, MECHS["never"], 6) == 1


def test_kemperman_dp_exact_against_enumeration():
    # dyadic probabilities: the float evolution is exact here
    mech = kemperman(0.5)
    for n in range(0, 13):
        assert Fraction(dp_survival(0, R, mech, [n])[0]) == enumerate_small(0, R, mech, n)


@pytest.mark.parametrize("name", sorted(MECHS))
@pytest.mark.parametrize("law, x", [(R, 0.0), (R, -1.0), (R, 2.0), (LAZY, -2.0), (SKEW, 1.0)])
def test_dp_matches_enumeration(name, law, x):
    mech = MECHS[name]
    n = 8 if law is R else 7
    dp = dp_survival(x, law, mech, list(range(n + 1)))
    for t in range(n + 1):
        assert dp[t] == pytest.approx(float(enumerate_small(x, law, mech, t)), abs=1e-12)


def test_no_crossing_ballot():
    for m in range(1, 11):
        p = dp_no_crossing_survival(0, R, immediate_kill(), [2 * m])[0]
        assert p == pytest.approx(math.comb(2 * m, m) / 4**m, abs=1e-12)


def test_no_crossing_killed_start():
    assert dp_no_crossing_survival(-1, R, immediate_kill(), [0, 1, 5, 50]) == [0.0] * 4


def test_no_crossing_never_absorb_is_classical_persistence():
    # P_0(S_1..S_n >= 0) equals the ballot value for the simple walk
    got = dp_no_crossing_survival(0, R, MECHS["never"], [2, 4, 6, 8])
    assert got == pytest.approx([math.comb(2 * m, m) / 4**m for m in (1, 2, 3, 4)], abs=1e-14)


def test_dp_u_classical_constant():
    u14 = dp_u(0, R, immediate_kill(), 2**14)
    assert u14 == pytest.approx(math.sqrt(2 / math.pi), rel=0.02)
    u13 = dp_u(0, R, immediate_kill(), 2**13)
    assert abs(u14 - u13) / u14 < 0.01
    assert dp_u(-1, R, immediate_kill(), 2**10) == 0.0


def test_endpoint_distribution():
    d0 = dp_endpoint_distribution(2.0, R, kemperman(0.3), 0)
    assert list(d0.positions) == [2.0] and list(d0.probs) == [1.0]
    d = dp_endpoint_distribution(0.0, R, immediate_kill(), 20)
    assert d.positions.min() >= 0 and set(d.positions) <= set(float(i) for i in range(21))
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert d.survival == pytest.approx(math.comb(20, 10) / 2**20)
    with pytest.raises(ZeroSurvival):
        dp_endpoint_distribution(-1.0, R, immediate_kill(), 3)


def test_incompatible_inputs():
    with pytest.raises(IncompatibleMechanism):
        dp_survival(0, IncrementLaw.gaussian(1.0), kemperman(0.3), [10])
    huge = build_mechanism({"family": "time-below-zero", "u": {"law": "deterministic", "m": 10**6}})
    with pytest.raises(IncompatibleMechanism):
        dp_survival(0, R, huge, [10])
    with pytest.raises(TooLargeInstance):
        enumerate_small(0, R, kemperman(0.3), 21)


def test_a_priori_bound_shape():
    hs = [256 * 2**j for j in range(7)]
    for x in (0, 3):
        vals = [math.sqrt(n) * p / (abs(x) + 1) for n, p in zip(hs, dp_survival(x, R, kemperman(0.3), hs))]
        assert max(vals) <= 1.05 * vals[0]


@settings(max_examples=30, deadline=None)
@given(name=st.sampled_from(sorted(MECHS)), x=st.integers(-3, 3), n=st.integers(1, 60))
def test_survival_monotone_and_dominates_no_crossing(name, x, n):
    mech = MECHS[name]
    hs = list(range(n + 1))
    surv = np.array(dp_survival(x, LAZY, mech, hs))
    noc = np.array(dp_no_crossing_survival(x, LAZY, mech, hs))
    assert np.all(np.diff(surv) <= 1e-15)
    assert np.all(noc <= surv + 1e-15)
    assert np.all((surv >= 0) & (surv <= 1 + 1e-12))
