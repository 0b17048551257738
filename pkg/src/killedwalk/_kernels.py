"""Compiled path simulation.

Laws and mechanisms are flattened into plain arrays (see
``IncrementLaw.kernel_args`` and ``SegmentMechanism.kernel_args``) so one
kernel serves every family.  All functions here are pure: a path's outcome
depends only on its arguments and its stream key.
"""

import math

import numpy as np
from numba import njit

from .rng import draw_u64, draw_uniform, segment_key, stream_key

# increment kinds
RADEMACHER = 0
LATTICE = 1
GAUSSIAN = 2
UNIFORM = 3

# mechanism families
NEVER = 0
TIME_BELOW_ZERO = 1
HAZARD = 2
AVOID_SETS = 3
INTERVAL_GATE = 4

# time-below-zero U laws
U_GEOMETRIC = 0
U_TABLE = 1
U_INF = np.int64(1) << np.int64(62)

# path end states
SURVIVED = 0
KILLED = 1
CROSSED = 2
KMAX = 3
CAPPED = 4

_TOP = np.uint64(63)
_TWO_PI = 2.0 * math.pi


@njit(cache=True, inline="always")
def _search(cum, v):
    # first index with cum[idx] > v, clamped to the last index.
    # np.searchsorted inside the step loop costs ~25ns/step in refcounting.
    lo = 0
    hi = cum.size - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] > v:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True, inline="always")
def draw_increment(kind, scale, vals, cum, key, ctr):
    if kind == RADEMACHER:
        bit = draw_u64(key, ctr) >> _TOP
        return (1.0 if bit else -1.0), ctr + 1
    if kind == LATTICE:
        return vals[_search(cum, draw_uniform(key, ctr))], ctr + 1
    if kind == GAUSSIAN:
        v1 = draw_uniform(key, ctr)
        v2 = draw_uniform(key, ctr + 1)
        return scale * math.sqrt(-2.0 * math.log(v1)) * math.cos(_TWO_PI * v2), ctr + 2
    v = draw_uniform(key, ctr)
    return scale * (2.0 * v - 1.0), ctr + 1


@njit(cache=True, inline="always")
def hazard_at(bp, hv, pos):
    if pos >= 0.0:
        return 0.0
    # piece index = number of breakpoints <= pos
    lo = 0
    hi = bp.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if bp[mid] <= pos:
            lo = mid + 1
        else:
            hi = mid
    return hv[lo]


@njit(cache=True, inline="always")
def in_set(set_off, set_lo, set_hi, set_flags, u, pos):
    if u < 0 or u + 1 >= set_off.size:
        return False
    for j in range(set_off[u], set_off[u + 1]):
        lo = set_lo[j]
        hi = set_hi[j]
        fl = set_flags[j]
        above = pos >= lo if (fl & 1) else pos > lo
        below = pos <= hi if (fl & 2) else pos < hi
        if above and below:
            return True
    return False


@njit(cache=True, inline="always")
def new_segment(family, mi, mf, tvals, tcum, key, ctr):
    """Sample the per-segment input U_k; returns (u_value, counter)."""
    if family == TIME_BELOW_ZERO:
        p_inf = mf[1]
        if p_inf > 0.0:
            v = draw_uniform(key, ctr)
            ctr += 1
            if v < p_inf:
                return U_INF, ctr
        if mi[0] == U_GEOMETRIC:
            q = mf[0]
            w = draw_uniform(key, ctr)
            ctr += 1
            if q >= 1.0:
                return np.int64(1), ctr
            g = math.ceil(math.log(w) / math.log1p(-q))
            if g >= 4.0e18:
                return U_INF, ctr
            return max(np.int64(1), np.int64(g)), ctr
        v = draw_uniform(key, ctr)
        return tvals[_search(tcum, v)], ctr + 1
    if family == AVOID_SETS:
        v = draw_uniform(key, ctr)
        return tvals[_search(tcum, v)], ctr + 1
    return np.int64(0), ctr


@njit(cache=True, inline="always")
def absorbed(family, mi, mf, bp, hv, set_off, set_lo, set_hi, set_flags,
             u, seg_key, k, i, pos):
    """Kill predicate K_i(u, pos) for the segment with index k."""
    if family == NEVER:
        return False
    if family == TIME_BELOW_ZERO:
        return pos < 0.0 and i >= u
    if family == HAZARD:
        p = hazard_at(bp, hv, pos)
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return p >= draw_uniform(seg_key, i)
    if family == AVOID_SETS:
        return in_set(set_off, set_lo, set_hi, set_flags, u, pos)
    # interval gate
    if i != 0:
        return False
    if k == 0 and mi[0] != 0:
        return False
    return not (mf[0] < pos < mf[1])


# The two path kernels never allocate; compiling them without NRT removes
# per-step refcount traffic on the mechanism arrays (~40x faster).
@njit(cache=True, _nrt=False)
def run_path(x, lkind, lscale, lvals, lcum,
             family, mi, mf, tvals, tcum, bp, hv, set_off, set_lo, set_hi, set_flags,
             horizon, step_cap, stop_at_crossing, k_max, key, ctr0,
             rec_t, rec_h, traj):
    """Simulate one path.

    Runs until absorption, until time ``horizon`` (if >= 0), until the first
    crossing (``stop_at_crossing``), until crossing ``k_max`` is reached (if
    >= 0) or until ``step_cap`` steps.  Crossing records with index below
    ``rec_t.size`` and, if ``traj.size > 0``, the trajectory are written in
    place.

    Returns ``(end_time, final_pos, n_crossings, status, counter)`` where
    ``end_time`` is the absorption or stopping time.
    """
    ctr = np.int64(ctr0)
    pos = x
    nonneg = pos >= 0.0
    k = 0
    tk = 0
    u, ctr = new_segment(family, mi, mf, tvals, tcum, key, ctr)
    seg = segment_key(key, np.uint64(0))
    if rec_t.size > 0:
        rec_t[0] = 0
        rec_h[0] = pos
    if traj.size > 0:
        traj[0] = pos
    limit = horizon if horizon >= 0 else step_cap
    m = 0
    while True:
        if absorbed(family, mi, mf, bp, hv, set_off, set_lo, set_hi, set_flags,
                    u, seg, k, m - tk, pos):
            return m, pos, k, KILLED, ctr
        if m >= limit:
            return m, pos, k, (SURVIVED if horizon >= 0 else CAPPED), ctr
        step, ctr = draw_increment(lkind, lscale, lvals, lcum, key, ctr)
        pos += step
        m += 1
        if traj.size > 0:
            traj[m] = pos
        side = pos >= 0.0
        if side != nonneg:
            nonneg = side
            k += 1
            tk = m
            if k < rec_t.size:
                rec_t[k] = m
                rec_h[k] = pos
            if stop_at_crossing:
                return m, pos, k, CROSSED, ctr
            if k_max >= 0 and k >= k_max:
                return m, pos, k, KMAX, ctr
            u, ctr = new_segment(family, mi, mf, tvals, tcum, key, ctr)
            seg = segment_key(key, np.uint64(k))


@njit(cache=True, nogil=True, _nrt=False)
def run_block(x, lkind, lscale, lvals, lcum,
              family, mi, mf, tvals, tcum, bp, hv, set_off, set_lo, set_hi, set_flags,
              horizon, step_cap, stop_at_crossing, k_max, seed, start,
              out_time, out_pos, out_ncross, out_status, out_rec_t, out_rec_h, traj):
    """Simulate replicates ``start .. start + out_time.size - 1``; ``traj`` is empty."""
    for j in range(out_time.size):
        key = stream_key(np.uint64(seed), np.uint64(start + j))
        t, p, nc, st, _ = run_path(
            x, lkind, lscale, lvals, lcum,
            family, mi, mf, tvals, tcum, bp, hv, set_off, set_lo, set_hi, set_flags,
            horizon, step_cap, stop_at_crossing, k_max, key, 0,
            out_rec_t[j], out_rec_h[j], traj)
        out_time[j] = t
        out_pos[j] = p
        out_ncross[j] = nc
        out_status[j] = st
