import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from killedwalk import _kernels as K
from killedwalk.errors import InvalidSpec
from killedwalk.mechanisms import (SegmentState, absorbed, analytic_u, build_mechanism, immediate_kill,
                                   kemperman, kills_at_start, new_segment)
from killedwalk.rng import RandomStream
from killedwalk.walk import IncrementLaw, run_paths


def tbz(**u):
    return build_mechanism({"family": "time-below-zero", "u": u})


def test_valid_specs():
    assert kemperman(0.3).u_law.q == 0.3
    assert build_mechanism({"family": "position-hazard", "p": 0.5}).hazard(-7.0) == 0.5
    assert build_mechanism({"family": "immediate-kill-below-zero"}) == immediate_kill()
    gate = build_mechanism({"family": "interval-gate", "interval": [-1, 1], "exempt_initial_segment": True})
    assert gate.exempt_initial_segment


@pytest.mark.parametrize("spec, needle", [
    ({"family": "avoid-sets", "sets": {"0": [[-1.5, -1.5]]}}, "interior"),
    ({"family": "position-hazard", "p": 1.5}, "[0,1]"),
    ({"family": "position-hazard", "breakpoints": [1.0], "values": [0.5, 0.2]}, "< 0"),
    ({"family": "position-hazard", "breakpoints": [-1.0, -2.0], "values": [0.5, 0.2, 0.1]}, "increasing"),
    ({"family": "position-hazard", "breakpoints": [-1.0], "values": [0.0, 0.3]}, "liminf"),
    ({"family": "position-hazard", "breakpoints": [-1.0], "values": [0.2, 0.3],
      "liminf": {"L": 0.5, "p_min": 0.25}}, "p_min"),
    ({"family": "time-below-zero", "u": {"law": "geometric", "q": 0.0}}, "q"),
    ({"family": "time-below-zero", "u": {"law": "geometric", "q": 0.3, "p_inf": 1.0}}, "inf"),
    ({"family": "time-below-zero", "u": {"law": "table", "pmf": {"1": 0.5, "2": 0.3}}}, "sums"),
    ({"family": "avoid-sets", "sets": {"0": [[-1, 0.5]]}}, "(-inf, 0)"),
    ({"family": "avoid-sets", "u_pmf": {"1": 1.0}, "sets": {"0": [[-2, -1]], "1": [[-2, -1]]}}, "P(U=0)"),
    ({"family": "interval-gate", "interval": [0.5, 1.0]}, "contain 0"),
    ({"family": "teleport"}, "unknown"),
])
def test_invalid_specs(spec, needle):
    with pytest.raises(InvalidSpec) as exc:
        build_mechanism(spec)
    assert needle in str(exc.value)


def test_spec_round_trip():
    specs = [
        {"family": "never-absorb"},
        {"family": "time-below-zero", "u": {"law": "table", "pmf": {"1": 0.25, "3": 0.25, "inf": 0.5}}},
        {"family": "time-below-zero", "u": {"law": "deterministic", "m": 4}},
        {"family": "position-hazard", "breakpoints": [-3.0, -1.0], "values": [0.9, 0.5, 0.1]},
        {"family": "avoid-sets", "u_pmf": {"0": 0.5, "2": 0.5},
         "sets": {"0": [[-2, -1]], "2": [{"lo": -4, "hi": -3, "closed": "left"}]}},
        {"family": "interval-gate", "interval": [-1, 2]},
    ]
    for spec in specs:
        mech = build_mechanism(spec)
        assert build_mechanism(mech.to_spec()) == mech


def test_deterministic_u_is_constant():
    mech = tbz(law="deterministic", m=5)
    s = RandomStream.for_replicate(0, 0)
    assert {new_segment(mech, s).u_value for _ in range(50)} == {5}


def test_avoid_sets_u_zero_selects_b0():
    mech = build_mechanism({"family": "avoid-sets", "sets": {"0": [[-2, -1]]}})
    s = RandomStream.for_replicate(0, 0)
    states = [new_segment(mech, s) for _ in range(50)]
    assert {st_.u_value for st_ in states} == {0}
    assert absorbed(mech, states[0], -1.5)
    assert not absorbed(mech, states[0], -0.5)


def test_geometric_u_mean():
    q = 0.3
    mech = kemperman(q)
    s = RandomStream.for_replicate(2024, 0)
    u = np.array([new_segment(mech, s).u_value for _ in range(1_000_000)], dtype=float)
    assert u.min() >= 1
    se = math.sqrt((1 - q) / q**2 / u.size)
    assert abs(u.mean() - 1 / q) < 4 * se


def test_u_infinity_atom_frequency():
    mech = kemperman(0.3, p_inf=0.25)
    s = RandomStream.for_replicate(3, 0)
    u = [new_segment(mech, s).u_value for _ in range(40_000)]
    frac = sum(v == math.inf for v in u) / len(u)
    assert abs(frac - 0.25) < 4 * math.sqrt(0.25 * 0.75 / len(u))


def test_geometric_hazard_is_memoryless():
    # started far below zero the walk never crosses, so tau = U_0
    q = 0.3
    n = 300_000
    batch = run_paths(-1e9, IncrementLaw.rademacher(), kemperman(q), n, seed=8, horizon=10_000)
    assert np.all(batch.status == K.KILLED)
    at_risk = int(batch.end_time.sum())  # ages 1..tau per path
    assert at_risk > 900_000
    rate = n / at_risk
    assert abs(rate - q) < 4 * math.sqrt(q * (1 - q) / at_risk)


def test_time_below_zero_predicate():
    mech = tbz(law="deterministic", m=2)
    assert absorbed(mech, SegmentState(2, 2), -1.0)
    assert not absorbed(mech, SegmentState(2, 1), -1.0)
    assert not absorbed(mech, SegmentState(2, 7), 3.0)
    assert not absorbed(mech, SegmentState(math.inf, 10**6), -1.0)


def test_interval_gate_predicate():
    gate = build_mechanism({"family": "interval-gate", "interval": [-1, 1]})
    assert absorbed(gate, SegmentState(0, 0, index=1), 2.0)
    assert not absorbed(gate, SegmentState(0, 1, index=1), 2.0)
    assert not absorbed(gate, SegmentState(0, 0, index=1), 0.5)
    assert absorbed(gate, SegmentState(0, 0, index=0), 2.0)
    exempt = build_mechanism({"family": "interval-gate", "interval": [-1, 1], "exempt_initial_segment": True})
    assert not absorbed(exempt, SegmentState(0, 0, index=0), 5.0)
    assert absorbed(exempt, SegmentState(0, 0, index=1), 5.0)


def test_avoid_set_membership():
    mech = build_mechanism({"family": "avoid-sets", "sets": {"0": [[-2, -1]]}})
    for i in (0, 3, 100):
        assert absorbed(mech, SegmentState(0, i), -1.5)


def test_hazard_uniform_drawn_once_per_step():
    mech = build_mechanism({"family": "position-hazard", "p": 0.5})
    stream = RandomStream.for_replicate(1, 0)
    state = new_segment(mech, stream, index=2)
    verdicts = [absorbed(mech, SegmentState(state.u_value, i, 2), -1.0) for i in range(200)]
    again = [absorbed(mech, SegmentState(state.u_value, i, 2), -1.0) for i in range(200)]
    assert verdicts == again
    assert 60 < sum(verdicts) < 140
    assert stream.counter == 0


def test_analytic_u():
    c = lambda y: 0.8 + abs(y)  # noqa: E731
    assert analytic_u(kemperman(0.3), -1.0, c) == 0.0
    assert analytic_u(kemperman(0.3, p_inf=0.5), -1.0, c) == pytest.approx(0.9)
    for mech in (kemperman(0.3), immediate_kill(), build_mechanism({"family": "never-absorb"}),
                 build_mechanism({"family": "avoid-sets", "sets": {"0": [[-2, -1]]}})):
        assert analytic_u(mech, 0.0, c) == pytest.approx(0.8)
    assert analytic_u(build_mechanism({"family": "avoid-sets", "sets": {"0": [[-2, -1]]}}), -1.0, c) is None
    assert analytic_u(build_mechanism({"family": "position-hazard", "p": 0.4}), -1.0, c) is None


families = st.sampled_from([
    build_mechanism({"family": "never-absorb"}),
    kemperman(0.5, p_inf=0.1),
    build_mechanism({"family": "position-hazard", "breakpoints": [-1.0], "values": [1.0, 0.5]}),
    build_mechanism({"family": "avoid-sets", "u_pmf": {"0": 0.5, "1": 0.5},
                     "sets": {"0": [[-2, -1]], "1": [[-5, -0.5]]}}),
    build_mechanism({"family": "interval-gate", "interval": [-1, 1]}),
])


@settings(max_examples=200, deadline=None)
@given(mech=families, seed=st.integers(0, 2**40), k=st.integers(0, 5), i=st.integers(0, 50),
       pos=st.floats(0.0, 1e6))
def test_no_kill_on_nonneg_side_except_gate(mech, seed, k, i, pos):
    state = new_segment(mech, RandomStream.for_replicate(seed, 0), index=k)
    state.steps_in_segment = i
    if mech.family == "interval-gate" and i == 0:
        assert absorbed(mech, state, pos) == (pos >= 1.0)
    else:
        assert not absorbed(mech, state, pos)


def test_kills_at_start():
    assert kills_at_start(immediate_kill(), -1.0)
    assert not kills_at_start(immediate_kill(), 0.0)
    assert not kills_at_start(kemperman(0.3), -1.0)
    assert kills_at_start(tbz(law="deterministic", m=0), -0.5)
    gate = build_mechanism({"family": "interval-gate", "interval": [-1, 1]})
    assert kills_at_start(gate, 1.0) and not kills_at_start(gate, 0.5)
    avoid = build_mechanism({"family": "avoid-sets", "u_pmf": {"0": 0.5, "1": 0.5},
                             "sets": {"0": [[-2, -1]], "1": [[-1.5, -1.2]]}})
    assert kills_at_start(avoid, -1.3) and not kills_at_start(avoid, -1.8)
