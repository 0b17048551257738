"""Exact survival probabilities on lattices.

Forward evolution of the sub-probability law of ``S_m`` on ``{τ > m}``.  The
only hidden state is the active segment's input ``U``; it is carried as a
small automaton of *layers* per side of zero:

* each layer holds the mass of paths in a given segment state, with a
  per-position survival factor applied at every time step;
* mass that stays on its side moves to the layer's successor (e.g. the next
  segment age); mass that changes side enters the other side's entry layers
  with the law of the fresh ``U``.

Positions are ``x + j*d`` for integer ``j`` and lattice span ``d``; after
``n`` steps ``j`` lies in ``[-n*s_down, n*s_up]``, so nothing is truncated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import IncompatibleMechanism, TooLargeInstance, ZeroSurvival
from .mechanisms import SegmentMechanism
from .walk import IncrementLaw

NONNEG, NEG = 0, 1
MAX_AGE_LAYERS = 4096
ENUM_LIMIT = 2**20


@dataclass
class _Automaton:
    factors: list[np.ndarray]          # survival factor per layer, over the grid
    succ: list[int]
    side: list[int]
    entries: tuple[list[tuple[int, float]], list[tuple[int, float]]]
    initial: tuple[list[tuple[int, float]], list[tuple[int, float]]]


def _automaton(mech: SegmentMechanism, positions: np.ndarray) -> _Automaton:
    G = positions.size
    ones = np.ones(G)
    neg = positions < 0
    fam = mech.family
    if fam == "never-absorb":
        factors, succ, side = [ones, ones], [0, 1], [NONNEG, NEG]
        entries = ([(0, 1.0)], [(1, 1.0)])
        return _Automaton(factors, succ, side, entries, entries)
    if fam == "position-hazard":
        p = np.array([mech.hazard(float(v)) for v in positions])
        factors, succ, side = [ones, 1.0 - p], [0, 1], [NONNEG, NEG]
        entries = ([(0, 1.0)], [(1, 1.0)])
        return _Automaton(factors, succ, side, entries, entries)
    if fam == "avoid-sets":
        factors, succ, side = [ones], [0], [NONNEG]
        neg_entries = []
        for u, pu in mech.u_pmf:
            hit = np.array([mech.in_set(u, float(v)) for v in positions])
            neg_entries.append((len(factors), pu))
            factors.append(np.where(hit & neg, 0.0, 1.0))
            succ.append(len(succ))
            side.append(NEG)
        entries = ([(0, 1.0)], neg_entries)
        return _Automaton(factors, succ, side, entries, entries)
    if fam == "interval-gate":
        lo, hi = mech.interval
        gate = ((positions > lo) & (positions < hi)).astype(float)
        # layers: 0 nonneg age 0, 1 nonneg later, 2 neg age 0, 3 neg later
        factors, succ, side = [gate, ones, gate, ones], [1, 1, 3, 3], [NONNEG, NONNEG, NEG, NEG]
        entries = ([(0, 1.0)], [(2, 1.0)])
        initial = ([(1, 1.0)], [(3, 1.0)]) if mech.exempt_initial_segment else entries
        return _Automaton(factors, succ, side, entries, initial)
    if fam == "time-below-zero":
        law = mech.u_law
        factors, succ, side = [ones], [0], [NONNEG]
        neg_entries = []
        if law.law == "geometric":
            # age 0 is hazard-free (U >= 1); later ages survive w.p. 1-q each
            factors += [ones, np.full(G, 1.0 - law.q)]
            succ += [2, 2]
            side += [NEG, NEG]
            neg_entries.append((1, 1.0 - law.p_inf))
            if law.p_inf > 0.0:
                factors.append(ones)
                succ.append(3)
                side.append(NEG)
                neg_entries.append((3, law.p_inf))
        else:
            top = law.max_finite + 1
            if top + 1 > MAX_AGE_LAYERS:
                raise IncompatibleMechanism(
                    f"time-below-zero: U support up to {top - 1} needs {top + 1} age layers "
                    f"(limit {MAX_AGE_LAYERS})")
            base = len(factors)
            for a in range(top + 1):
                prev, cur = law.tail(a - 1), law.tail(a)
                factors.append(np.full(G, cur / prev if prev > 0.0 else 0.0))
                succ.append(base + min(a + 1, top))
                side.append(NEG)
            neg_entries.append((base, 1.0))
        entries = ([(0, 1.0)], neg_entries)
        return _Automaton(factors, succ, side, entries, entries)
    raise IncompatibleMechanism(f"mechanism family {fam!r} has no lattice representation")


@dataclass(frozen=True)
class EndpointDistribution:
    """Law of ``S_n`` given ``τ > n`` (``probs`` sums to one)."""

    positions: np.ndarray
    probs: np.ndarray
    survival: float


@dataclass
class _Run:
    survival: dict[int, float]
    endpoint: tuple[np.ndarray, np.ndarray] | None


def _evolve(x: float, law: IncrementLaw, mech: SegmentMechanism, horizons: Sequence[int],
            no_crossing: bool = False, endpoint: bool = False) -> _Run:
    if law.lattice_span is None:
        raise IncompatibleMechanism(f"lattice oracle needs lattice increments, got {law.kind}")
    hs = sorted({int(h) for h in horizons})
    if not hs or hs[0] < 0:
        raise ValueError("horizons must be nonnegative")
    n = hs[-1]
    steps, probs = law.lattice_steps()
    d = law.lattice_span
    s_down = max(0, -int(steps.min()))
    s_up = max(0, int(steps.max()))
    c = n * s_down
    G = n * (s_down + s_up) + 1
    positions = x + (np.arange(G) - c) * d
    z0 = int(np.searchsorted(positions, 0.0, side="left"))  # first index on the nonnegative side
    auto = _automaton(mech, positions)
    L = len(auto.factors)
    start_side = NONNEG if x >= 0 else NEG
    entries = auto.entries
    if no_crossing:
        entries = tuple(e if s == start_side else [] for s, e in enumerate(entries))

    mass = [np.zeros(G) for _ in range(L)]
    for layer, w in auto.initial[start_side]:
        mass[layer][c] += w * auto.factors[layer][c]
    out: dict[int, float] = {}
    wanted = set(hs)
    if 0 in wanted:
        out[0] = float(sum(m[c] for m in mass))
    a, b = c, c + 1
    live = [bool(m[c] > 0.0) for m in mass]
    for t in range(1, n + 1):
        a2, b2 = max(0, a - s_down), min(G, b + s_up)
        new = [np.zeros(G) for _ in range(L)]
        arrive = (np.zeros(G), np.zeros(G))
        for layer in range(L):
            if not live[layer]:
                continue
            src = mass[layer][a:b]
            conv = np.zeros(G)
            for s, p in zip(steps, probs):
                conv[a + s:b + s] += p * src
            own = auto.side[layer]
            nxt = new[auto.succ[layer]]
            if own == NONNEG:
                lo = max(z0, a2)
                nxt[lo:b2] += conv[lo:b2]
                hi = min(z0, b2)
                arrive[NEG][a2:hi] += conv[a2:hi]
            else:
                hi = min(z0, b2)
                nxt[a2:hi] += conv[a2:hi]
                lo = max(z0, a2)
                arrive[NONNEG][lo:b2] += conv[lo:b2]
        for s_ in (NONNEG, NEG):
            for layer, w in entries[s_]:
                new[layer][a2:b2] += w * arrive[s_][a2:b2]
        for layer in range(L):
            new[layer][a2:b2] *= auto.factors[layer][a2:b2]
        mass = new
        live = [bool(m[a2:b2].any()) for m in mass]
        a, b = a2, b2
        if t in wanted:
            out[t] = float(sum(m[a:b].sum() for m in mass))
    ep = None
    if endpoint:
        ep = (positions, np.sum(mass, axis=0))
    return _Run(out, ep)


def dp_survival(x: float, law: IncrementLaw, mech: SegmentMechanism,
                horizons: Sequence[int]) -> list[float]:
    """Exact ``P_x(τ > n)`` for each ``n`` in ``horizons``."""
    run = _evolve(x, law, mech, horizons)
    return [run.survival[int(h)] for h in horizons]


def dp_no_crossing_survival(y: float, law: IncrementLaw, mech: SegmentMechanism,
                            horizons: Sequence[int]) -> list[float]:
    """Exact ``P_y(τ > n, T_1 > n)``."""
    run = _evolve(y, law, mech, horizons, no_crossing=True)
    return [run.survival[int(h)] for h in horizons]


def dp_u(y: float, law: IncrementLaw, mech: SegmentMechanism, n_large: int) -> float:
    """Finite-``n`` proxy ``n^{1/2} P_y(τ > n, T_1 > n)`` for ``u(y)``."""
    return math.sqrt(n_large) * dp_no_crossing_survival(y, law, mech, [n_large])[0]


def dp_endpoint_distribution(x: float, law: IncrementLaw, mech: SegmentMechanism,
                             n: int) -> EndpointDistribution:
    run = _evolve(x, law, mech, [n], endpoint=True)
    positions, mass = run.endpoint
    total = float(mass.sum())
    if not total > 0.0:
        raise ZeroSurvival(f"P_x(tau > {n}) = 0 for x={x}: no surviving mass")
    keep = mass > 0.0
    return EndpointDistribution(positions[keep], mass[keep] / total, total)


def _segment_survival(mech: SegmentMechanism, seg: list[float], k: int,
                      q: dict) -> Fraction:
    """P(no kill during one segment) by summing over the segment input U."""
    fam = mech.family
    if fam == "never-absorb":
        return Fraction(1)
    if fam == "position-hazard":
        out = Fraction(1)
        for pos in seg:
            out *= 1 - q["hazard"](pos)
        return out
    if fam == "interval-gate":
        if k == 0 and mech.exempt_initial_segment:
            return Fraction(1)
        lo, hi = mech.interval
        return Fraction(1) if lo < seg[0] < hi else Fraction(0)
    if fam == "avoid-sets":
        return sum((pu for u, pu in q["u_pmf"]
                    if not any(mech.in_set(u, pos) for pos in seg)), Fraction(0))
    # time-below-zero: every value of U at or beyond the segment length acts alike
    length = len(seg)

    def survives(u: int) -> bool:
        return not any(pos < 0 and i >= u for i, pos in enumerate(seg))

    law = mech.u_law
    p_inf = q["p_inf"]
    if law.law == "geometric":
        qq = q["q"]
        finite = 1 - p_inf
        total = p_inf
        for u in range(1, length):
            if survives(u):
                total += finite * qq * (1 - qq) ** (u - 1)
        total += finite * (1 - qq) ** (length - 1)  # P(U >= length)
        return total
    total = p_inf
    for u, pu in q["pmf"]:
        if survives(u):
            total += pu
    return total


def _exact(v: float) -> Fraction:
    return Fraction(repr(float(v)))


def enumerate_small(x: float, law: IncrementLaw, mech: SegmentMechanism, n: int) -> Fraction:
    """``P_x(τ > n)`` as an exact rational by summing over all step sequences.

    Independent of the layered evolution: every path is split into segments
    literally and each segment's survival is averaged over ``U`` directly.
    """
    if law.lattice_span is None:
        raise IncompatibleMechanism("enumeration needs a finitely supported increment law")
    support = [_exact(v) for v in law.support]
    probs = [_exact(p) for p in law.probs]
    if len(support) ** n > ENUM_LIMIT:
        raise TooLargeInstance(f"{len(support)}^{n} paths exceeds the enumeration limit {ENUM_LIMIT}")
    q: dict = {}
    if mech.family == "position-hazard":
        q["hazard"] = lambda pos: _exact(mech.hazard(float(pos)))
    elif mech.family == "avoid-sets":
        q["u_pmf"] = [(u, _exact(p)) for u, p in mech.u_pmf]
    elif mech.family == "time-below-zero":
        law_u = mech.u_law
        q["p_inf"] = _exact(law_u.p_inf)
        if law_u.law == "geometric":
            q["q"] = _exact(law_u.q)
        else:
            q["pmf"] = [(u, _exact(p)) for u, p in law_u.finite_pmf()]
    x0 = _exact(x)
    total = Fraction(0)
    for combo in itertools.product(range(len(support)), repeat=n):
        weight = Fraction(1)
        path = [x0]
        for j in combo:
            weight *= probs[j]
            path.append(path[-1] + support[j])
        segments: list[list[Fraction]] = [[path[0]]]
        for prev, cur in zip(path, path[1:]):
            if (prev >= 0) != (cur >= 0):
                segments.append([cur])
            else:
                segments[-1].append(cur)
        surv = Fraction(1)
        for k, seg in enumerate(segments):
            surv *= _segment_survival(mech, seg, k, q)
            if surv == 0:
                break
        total += weight * surv
    return total
