"""Absorption mechanisms.

A mechanism is a family of kill predicates ``K_i(u, x)`` evaluated at every
time step, where ``i`` is the number of steps since the walk last changed
side, ``u`` is an input drawn afresh for each segment and ``x`` is the
current position.

Families and their predicates:

``never-absorb``
    never kills.
``time-below-zero``
    kills when ``x < 0`` and ``i >= U``; ``U`` is geometric on ``{1, 2, ...}``,
    deterministic, or tabulated, each with an optional atom at infinity.
``position-hazard``
    kills with probability ``p(x)`` at each step (``p = 0`` on ``[0, inf)``);
    realised as ``p(x) >= u_i`` with an independent uniform ``u_i`` per step.
``avoid-sets``
    kills when ``x`` lies in ``B_U``; ``U`` is discrete on ``{0, ..., M}``.
``interval-gate``
    kills at the first step of a segment (``i = 0``) when ``x`` is outside an
    open interval around zero.

Mechanisms are immutable and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Mapping

import numpy as np

from . import _kernels as K
from .errors import InvalidSpec
from .rng import RandomStream

FAMILIES = ("never-absorb", "time-below-zero", "position-hazard", "avoid-sets", "interval-gate")
_FAMILY_CODE = {
    "never-absorb": K.NEVER,
    "time-below-zero": K.TIME_BELOW_ZERO,
    "position-hazard": K.HAZARD,
    "avoid-sets": K.AVOID_SETS,
    "interval-gate": K.INTERVAL_GATE,
}
_CLOSURES = ("both", "left", "right", "neither")
_PMF_TOL = 1e-12


def _prob(value: Any, what: str) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise InvalidSpec(f"{what}: not a number: {value!r}") from None
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise InvalidSpec(f"{what} {p!r} outside [0,1]")
    return p


def _int_pmf(raw: Any, what: str, allow_inf: bool = False) -> tuple[tuple[tuple[int, float], ...], float]:
    """Parse ``{value: prob}`` or ``[[value, prob], ...]`` over the nonnegative integers."""
    items = raw.items() if isinstance(raw, Mapping) else raw
    masses: dict[int, float] = {}
    inf_mass = 0.0
    try:
        pairs = [(k, v) for k, v in items]
    except (TypeError, ValueError):
        raise InvalidSpec(f"{what}: expected a mapping or list of [value, prob] pairs") from None
    for key, value in pairs:
        p = _prob(value, f"{what} mass at {key}")
        if allow_inf and str(key).strip().lower() in ("inf", "infinity", "∞"):
            inf_mass += p
            continue
        try:
            fk = float(key)
        except (TypeError, ValueError):
            raise InvalidSpec(f"{what}: support point {key!r} is not an integer") from None
        if not fk.is_integer() or fk < 0:
            raise InvalidSpec(f"{what}: support point {key!r} is not a nonnegative integer")
        masses[int(fk)] = masses.get(int(fk), 0.0) + p
    return tuple(sorted((k, v) for k, v in masses.items() if v > 0.0)), inf_mass


@dataclass(frozen=True)
class ULaw:
    """Law of the time a segment may spend below zero, on ``{0, 1, ...} ∪ {∞}``."""

    law: str
    q: float | None = None
    m: int | None = None
    pmf: tuple[tuple[int, float], ...] = ()
    p_inf: float = 0.0

    def finite_pmf(self) -> tuple[tuple[int, float], ...]:
        """Unconditional finite masses (excluding the atom at infinity)."""
        if self.law == "deterministic":
            return ((self.m, 1.0 - self.p_inf),)
        if self.law == "table":
            return self.pmf
        raise ValueError("geometric law has unbounded support")

    def tail(self, i: int) -> float:
        """P(U > i)."""
        if i < 0:
            return 1.0
        if self.law == "geometric":
            return self.p_inf + (1.0 - self.p_inf) * (1.0 - self.q) ** i
        return self.p_inf + sum(p for v, p in self.finite_pmf() if v > i)

    @property
    def max_finite(self) -> int | None:
        if self.law == "geometric":
            return None
        return max(v for v, _ in self.finite_pmf())

    def to_spec(self) -> dict:
        out: dict[str, Any] = {"law": self.law}
        if self.law == "geometric":
            out["q"] = self.q
        elif self.law == "deterministic":
            out["m"] = self.m
        else:
            out["pmf"] = {str(v): p for v, p in self.pmf}
        out["p_inf"] = self.p_inf
        return out


def _parse_ulaw(raw: Mapping) -> ULaw:
    law = raw.get("law")
    if law == "geometric":
        q = float(raw.get("q", float("nan")))
        if not 0.0 < q <= 1.0:
            raise InvalidSpec(f"time-below-zero: geometric q={q!r} must lie in (0,1]")
        p_inf = _prob(raw.get("p_inf", 0.0), "time-below-zero: P(U=inf)")
        if p_inf >= 1.0:
            raise InvalidSpec("time-below-zero: P(U=inf) must be < 1")
        return ULaw("geometric", q=q, p_inf=p_inf)
    if law == "deterministic":
        m = raw.get("m")
        if not isinstance(m, (int, np.integer)) or isinstance(m, bool) or m < 0:
            raise InvalidSpec(f"time-below-zero: deterministic m={m!r} must be a nonnegative integer")
        p_inf = _prob(raw.get("p_inf", 0.0), "time-below-zero: P(U=inf)")
        if p_inf >= 1.0:
            raise InvalidSpec("time-below-zero: P(U=inf) must be < 1")
        return ULaw("deterministic", m=int(m), p_inf=p_inf)
    if law == "table":
        pmf, inf_mass = _int_pmf(raw.get("pmf", {}), "time-below-zero pmf", allow_inf=True)
        p_inf = inf_mass + _prob(raw.get("p_inf", 0.0), "time-below-zero: P(U=inf)")
        total = sum(p for _, p in pmf) + p_inf
        if abs(total - 1.0) > _PMF_TOL:
            raise InvalidSpec(f"time-below-zero: pmf plus P(U=inf) sums to {total!r}, not 1")
        if p_inf >= 1.0 or not pmf:
            raise InvalidSpec("time-below-zero: P(U=inf) must be < 1")
        return ULaw("table", pmf=pmf, p_inf=p_inf)
    raise InvalidSpec(f"time-below-zero: unknown U law {law!r} (geometric, deterministic, table)")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed: str = "both"

    def contains(self, x: float) -> bool:
        above = x >= self.lo if self.closed in ("both", "left") else x > self.lo
        below = x <= self.hi if self.closed in ("both", "right") else x < self.hi
        return above and below

    @property
    def flags(self) -> int:
        return (1 if self.closed in ("both", "left") else 0) | (2 if self.closed in ("both", "right") else 0)

    def to_spec(self) -> Any:
        if self.closed == "both":
            return [self.lo, self.hi]
        return {"lo": self.lo, "hi": self.hi, "closed": self.closed}


def _parse_interval(raw: Any, where: str) -> Interval:
    if isinstance(raw, Mapping):
        lo, hi, closed = raw.get("lo"), raw.get("hi"), raw.get("closed", "both")
    elif isinstance(raw, (list, tuple)) and len(raw) == 2:
        (lo, hi), closed = raw, "both"
    else:
        raise InvalidSpec(f"avoid-sets: {where}: interval must be [lo, hi] or {{lo, hi, closed}}")
    if closed not in _CLOSURES:
        raise InvalidSpec(f"avoid-sets: {where}: closed must be one of {_CLOSURES}")
    try:
        lo, hi = float(lo), float(hi)
    except (TypeError, ValueError):
        raise InvalidSpec(f"avoid-sets: {where}: bounds must be numbers") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidSpec(f"avoid-sets: {where}: need finite lo <= hi, got [{lo}, {hi}]")
    right_closed = closed in ("both", "right")
    if hi > 0.0 or (hi == 0.0 and right_closed):
        raise InvalidSpec(f"avoid-sets: {where}: interval [{lo}, {hi}] does not lie in (-inf, 0)")
    return Interval(lo, hi, closed)


@dataclass(frozen=True)
class SegmentMechanism:
    family: str
    u_law: ULaw | None = None
    breakpoints: tuple[float, ...] = ()
    hazard_values: tuple[float, ...] = ()
    u_pmf: tuple[tuple[int, float], ...] = ()
    sets: tuple[tuple[Interval, ...], ...] = ()
    interval: tuple[float, float] | None = None
    exempt_initial_segment: bool = False

    def hazard(self, x: float) -> float:
        if self.family != "position-hazard" or x >= 0.0:
            return 0.0
        return self.hazard_values[int(np.searchsorted(self.breakpoints, x, side="right"))]

    def hazard_floor(self) -> tuple[float, float]:
        """``(L, p_min)`` with ``p(x) >= p_min > 0`` on ``(-inf, -L]``."""
        L = -self.breakpoints[0] if self.breakpoints else 0.0
        return L, self.hazard_values[0]

    def in_set(self, u: int, x: float) -> bool:
        if not 0 <= u < len(self.sets):
            return False
        return any(iv.contains(x) for iv in self.sets[u])

    def to_spec(self) -> dict:
        out: dict[str, Any] = {"family": self.family}
        if self.family == "time-below-zero":
            out["u"] = self.u_law.to_spec()
        elif self.family == "position-hazard":
            out["breakpoints"] = list(self.breakpoints)
            out["values"] = list(self.hazard_values)
        elif self.family == "avoid-sets":
            out["u_pmf"] = {str(v): p for v, p in self.u_pmf}
            out["sets"] = {str(u): [iv.to_spec() for iv in ivs] for u, ivs in enumerate(self.sets) if ivs}
        elif self.family == "interval-gate":
            out["interval"] = list(self.interval)
            out["exempt_initial_segment"] = self.exempt_initial_segment
        return out

    @cached_property
    def kernel_args(self) -> tuple:
        f64, i64 = np.float64, np.int64
        mi = np.zeros(1, dtype=i64)
        mf = np.zeros(2, dtype=f64)
        tvals = np.zeros(1, dtype=i64)
        tcum = np.ones(1, dtype=f64)
        bp = np.zeros(0, dtype=f64)
        hv = np.zeros(1, dtype=f64)
        set_off = np.zeros(1, dtype=i64)
        set_lo = np.zeros(0, dtype=f64)
        set_hi = np.zeros(0, dtype=f64)
        set_flags = np.zeros(0, dtype=i64)
        if self.family == "time-below-zero":
            law = self.u_law
            mf[1] = law.p_inf
            if law.law == "geometric":
                mi[0] = K.U_GEOMETRIC
                mf[0] = law.q
            else:
                mi[0] = K.U_TABLE
                vals, probs = zip(*law.finite_pmf())
                tvals = np.array(vals, dtype=i64)
                tcum = np.cumsum(np.array(probs, dtype=f64) / sum(probs))
                tcum[-1] = 1.0
        elif self.family == "position-hazard":
            bp = np.array(self.breakpoints, dtype=f64)
            hv = np.array(self.hazard_values, dtype=f64)
        elif self.family == "avoid-sets":
            vals, probs = zip(*self.u_pmf)
            tvals = np.array(vals, dtype=i64)
            tcum = np.cumsum(np.array(probs, dtype=f64))
            tcum[-1] = 1.0
            offs = [0]
            flat: list[Interval] = []
            for ivs in self.sets:
                flat.extend(ivs)
                offs.append(len(flat))
            set_off = np.array(offs, dtype=i64)
            set_lo = np.array([iv.lo for iv in flat], dtype=f64)
            set_hi = np.array([iv.hi for iv in flat], dtype=f64)
            set_flags = np.array([iv.flags for iv in flat], dtype=i64)
        elif self.family == "interval-gate":
            mf[0], mf[1] = self.interval
            mi[0] = int(self.exempt_initial_segment)
        return (_FAMILY_CODE[self.family], mi, mf, tvals, tcum, bp, hv,
                set_off, set_lo, set_hi, set_flags)


def immediate_kill() -> SegmentMechanism:
    """Classical persistence: killed on the first visit to ``(-inf, 0)``."""
    return SegmentMechanism("position-hazard", breakpoints=(), hazard_values=(1.0,))


def kemperman(q: float, p_inf: float = 0.0) -> SegmentMechanism:
    """Geometric time below zero."""
    return build_mechanism({"family": "time-below-zero", "u": {"law": "geometric", "q": q, "p_inf": p_inf}})


def build_mechanism(spec: Mapping | SegmentMechanism) -> SegmentMechanism:
    """Validate a mechanism description and return the immutable mechanism.

    Raises :class:`InvalidSpec` naming the violated invariant.
    """
    if isinstance(spec, SegmentMechanism):
        return spec
    if not isinstance(spec, Mapping):
        raise InvalidSpec("mechanism spec must be a mapping")
    family = spec.get("family")
    if family in ("immediate-kill", "immediate-kill-below-zero"):
        return immediate_kill()
    if family == "never-absorb":
        return SegmentMechanism("never-absorb")
    if family == "time-below-zero":
        raw = spec.get("u")
        if not isinstance(raw, Mapping):
            raise InvalidSpec("time-below-zero: missing 'u' law block")
        return SegmentMechanism("time-below-zero", u_law=_parse_ulaw(raw))
    if family == "position-hazard":
        return _build_hazard(spec)
    if family == "avoid-sets":
        return _build_avoid(spec)
    if family == "interval-gate":
        return _build_gate(spec)
    raise InvalidSpec(f"unknown mechanism family {family!r}; expected one of {FAMILIES}")


def _build_hazard(spec: Mapping) -> SegmentMechanism:
    if "p" in spec:
        bps: list[float] = []
        vals = [_prob(spec["p"], "position-hazard: hazard value")]
    else:
        bps = [float(b) for b in spec.get("breakpoints", [])]
        vals = [_prob(v, "position-hazard: hazard value") for v in spec.get("values", [])]
    if len(vals) != len(bps) + 1:
        raise InvalidSpec("position-hazard: need len(values) == len(breakpoints) + 1")
    if any(b >= 0.0 or not math.isfinite(b) for b in bps):
        raise InvalidSpec("position-hazard: breakpoints must be finite and < 0 (p(x)=0 for x >= 0)")
    if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
        raise InvalidSpec("position-hazard: breakpoints must be strictly increasing")
    if vals[0] <= 0.0:
        raise InvalidSpec("position-hazard: liminf of p at -inf must be > 0")
    mech = SegmentMechanism("position-hazard", breakpoints=tuple(bps), hazard_values=tuple(vals))
    declared = spec.get("liminf")
    if declared is not None:
        L, p_min = float(declared["L"]), float(declared["p_min"])
        if p_min <= 0.0:
            raise InvalidSpec("position-hazard: declared p_min must be > 0")
        # pieces meeting (-inf, -L]
        lows = [-math.inf, *bps]
        if any(lo <= -L and v < p_min for lo, v in zip(lows, vals)):
            raise InvalidSpec(f"position-hazard: p(x) < p_min={p_min} somewhere on (-inf, {-L}]")
    return mech


def _build_avoid(spec: Mapping) -> SegmentMechanism:
    pmf, _ = _int_pmf(spec.get("u_pmf", {"0": 1.0}), "avoid-sets u_pmf")
    total = sum(p for _, p in pmf)
    if abs(total - 1.0) > _PMF_TOL:
        raise InvalidSpec(f"avoid-sets: u_pmf sums to {total!r}, not 1")
    if not pmf or pmf[0][0] != 0:
        raise InvalidSpec("avoid-sets: P(U=0) must be > 0")
    raw_sets = spec.get("sets")
    if isinstance(raw_sets, Mapping):
        indexed = {int(k): v for k, v in raw_sets.items()}
    elif isinstance(raw_sets, (list, tuple)):
        indexed = dict(enumerate(raw_sets))
    else:
        raise InvalidSpec("avoid-sets: 'sets' must map U values to interval lists")
    top = max([v for v, _ in pmf] + list(indexed))
    sets = []
    for u in range(top + 1):
        sets.append(tuple(_parse_interval(iv, f"B_{u}") for iv in indexed.get(u, [])))
    if not any(iv.lo < iv.hi for iv in sets[0]):
        raise InvalidSpec("avoid-sets: B_0 must have non-empty interior")
    return SegmentMechanism("avoid-sets", u_pmf=pmf, sets=tuple(sets))


def _build_gate(spec: Mapping) -> SegmentMechanism:
    raw = spec.get("interval")
    try:
        lo, hi = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise InvalidSpec("interval-gate: 'interval' must be [lo, hi]") from None
    if not lo < 0.0 < hi:
        raise InvalidSpec(f"interval-gate: open interval ({lo}, {hi}) must contain 0")
    return SegmentMechanism("interval-gate", interval=(lo, hi),
                            exempt_initial_segment=bool(spec.get("exempt_initial_segment", False)))


@dataclass
class SegmentState:
    """Path-local state of the active segment.

    ``u_value`` is the sampled ``U_k`` (``math.inf`` for the atom at
    infinity) or, for ``position-hazard``, the segment's uniform substream.
    """

    u_value: Any
    steps_in_segment: int = 0
    index: int = 0


def new_segment(mech: SegmentMechanism, stream: RandomStream, index: int = 0) -> SegmentState:
    if mech.family == "position-hazard":
        return SegmentState(stream.segment(index), 0, index)
    code, mi, mf, tvals, tcum, *_ = mech.kernel_args
    u, ctr = K.new_segment(code, mi, mf, tvals, tcum, np.uint64(stream.key), np.int64(stream.counter))
    stream.counter = int(ctr)
    u = int(u)
    return SegmentState(math.inf if u >= K.U_INF else u, 0, index)


def absorbed(mech: SegmentMechanism, state: SegmentState, position: float) -> bool:
    """Evaluate ``K_i(u, position)`` with ``i = state.steps_in_segment``."""
    code, mi, mf, _, _, bp, hv, set_off, set_lo, set_hi, set_flags = mech.kernel_args
    seg_key = np.uint64(0)
    u = np.int64(0)
    if mech.family == "position-hazard":
        seg_key = np.uint64(state.u_value.key)
    elif state.u_value is not None:
        u = np.int64(K.U_INF if state.u_value == math.inf else state.u_value)
    return bool(K.absorbed(code, mi, mf, bp, hv, set_off, set_lo, set_hi, set_flags,
                           u, seg_key, state.index, state.steps_in_segment, float(position)))


def kills_at_start(mech: SegmentMechanism, y: float) -> bool:
    """True when a walk started at ``y`` is absorbed at time 0 with probability one."""
    fam = mech.family
    if fam == "position-hazard":
        return mech.hazard(y) >= 1.0
    if fam == "avoid-sets":
        return all(mech.in_set(u, y) for u, _ in mech.u_pmf)
    if fam == "interval-gate":
        lo, hi = mech.interval
        return not mech.exempt_initial_segment and not lo < y < hi
    if fam == "time-below-zero":
        law = mech.u_law
        return y < 0 and law.law != "geometric" and law.tail(0) == 0.0
    return False


def analytic_u(mech: SegmentMechanism, y: float, c_provider: Callable[[float], float]) -> float | None:
    """Closed-form limit of ``n^{1/2} P_y(tau > n, T_1 > n)`` where one exists.

    Uses ``{tau > n, T_1 > n} = {T_1 > n}`` wherever the mechanism cannot
    kill before the first crossing, and the independence of ``U_0`` from the
    walk below zero for ``time-below-zero``.  Returns ``None`` when only
    numerical estimation is possible.
    """
    fam = mech.family
    if fam == "never-absorb":
        return float(c_provider(y))
    if fam == "interval-gate":
        lo, hi = mech.interval
        if mech.exempt_initial_segment or lo < y < hi:
            return float(c_provider(y))
        return 0.0
    if y >= 0.0:
        return float(c_provider(y))
    if fam == "time-below-zero":
        p_inf = mech.u_law.p_inf
        return 0.0 if p_inf == 0.0 else float(c_provider(y)) * p_inf
    return None
