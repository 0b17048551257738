"""Diagnostics for the four model conditions and the endpoint limit law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .errors import TooFewSurvivors
from .estimators import _censor_check, _wls, estimate_survival, wilson
from .mechanisms import SegmentMechanism
from .oracle import dp_endpoint_distribution, dp_no_crossing_survival, dp_survival
from .walk import DEFAULT_STEP_CAP, IncrementLaw, run_paths

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"

C1_R2_MIN = 0.98
C2_TOLERANCE = 0.05
C2_FLOOR = 0.01
C3_EPSILON = 0.05
C4_KS_MAX = 0.05
C4_MIN_CLASS_SHARE = 0.05
C4_BATCH = 1 << 16


@dataclass
class ConditionReport:
    condition: str
    columns: tuple[str, ...]
    table: list[tuple]
    fitted: dict
    verdict: str
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"condition": self.condition, "verdict": self.verdict, "fitted": self.fitted,
                "thresholds": self.thresholds, "rows": len(self.table)}


def rayleigh_cdf(z):
    """Standard Rayleigh CDF ``1 - exp(-z^2/2)`` (time-1 law of the Brownian meander)."""
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0.0) or np.any(np.isnan(arr)):
        raise ValueError(f"rayleigh_cdf needs z >= 0, got {z!r}")
    out = -np.expm1(-0.5 * arr * arr)
    return float(out) if out.ndim == 0 else out


def ks_statistic(sample, cdf: Callable, weights=None) -> float:
    """One-sample Kolmogorov-Smirnov distance ``sup |F_m - F|``.

    ``weights`` turns the empirical CDF into the CDF of a discrete law, which
    lets exact endpoint distributions be tested the same way as samples.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("ks_statistic needs a nonempty sample")
    w = np.ones(x.size) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    vals, start = np.unique(x, return_index=True)
    mass = np.add.reduceat(w, start)
    upper = np.cumsum(mass) / mass.sum()
    lower = np.concatenate(([0.0], upper[:-1]))
    F = np.asarray(cdf(vals), dtype=float)
    return float(max(np.max(upper - F), np.max(F - lower), 0.0))


def _bound_column(mech: SegmentMechanism, ks: Sequence[int]) -> list[float] | None:
    if mech.family != "time-below-zero":
        return None
    # survival of each negative segment is at most P(U > 1): one step past age 0
    r = mech.u_law.tail(1)
    return [r ** ((k - 1) / 2) for k in ks]


def check_c1(x: float, law: IncrementLaw, mech: SegmentMechanism, k_range: Sequence[int] = range(1, 9),
             total_paths: int = 1_000_000, seed: int = 0, *, r2_min: float = C1_R2_MIN,
             step_cap: int = DEFAULT_STEP_CAP, workers: int | None = None) -> ConditionReport:
    """Geometric decay of ``P_x(tau >= T_k)`` in the crossing index."""
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 1:
        raise ValueError("k_range must be a nonempty subset of {1, 2, ...}")
    batch = run_paths(x, law, mech, total_paths, seed, k_max=ks[-1], step_cap=step_cap, workers=workers)
    capped = batch.status == K.CAPPED
    _censor_check(int(capped.sum()), total_paths, step_cap, "crossing chain")
    bound = _bound_column(mech, ks)
    rows = []
    for j, k in enumerate(ks):
        reached = batch.n_crossings >= k
        hits = int(reached.sum())
        lo, hi = wilson(hits, total_paths)
        # censored paths may still reach crossing k
        upper = (hits + int((capped & ~reached).sum())) / total_paths
        se = math.sqrt(hits / total_paths * (1 - hits / total_paths) / total_paths)
        rows.append((k, hits / total_paths, lo, hi, se, upper, bound[j] if bound else math.nan))
    values = np.array([r[1] for r in rows])
    thresholds = {"r2_min": r2_min, "gamma_plus_2se_below": 1.0}
    positive = values > 0.0
    if positive.sum() < 2:
        fitted = {"gamma": math.nan, "gamma_stderr": math.nan, "r2": math.nan,
                  "note": "fewer than two crossings with positive reach probability"}
        verdict = INCONCLUSIVE
    else:
        kk = np.array(ks, dtype=float)[positive]
        slope, _, se, r2 = _wls(kk, np.log(values[positive]), None)
        gamma = math.exp(slope)
        gamma_se = gamma * (se if math.isfinite(se) else 0.0)
        fitted = {"gamma": gamma, "gamma_stderr": gamma_se, "r2": r2}
        verdict = PASS if gamma + 2 * gamma_se < 1.0 and r2 >= r2_min else FAIL
    if bound:
        fitted["bound_ok"] = bool(all(r[1] <= r[6] + 4 * r[4] for r in rows))
    fitted["censored"] = int(capped.sum())
    return ConditionReport("C1", ("k", "value", "ci_low", "ci_high", "se", "upper_with_censored", "bound"),
                           rows, fitted, verdict, thresholds)


def _gap(a: float, b: float, floor: float) -> float:
    return abs(b - a) / max(abs(b), floor)


def check_c2(y_grid: Sequence[float], law: IncrementLaw, mech: SegmentMechanism, n_grid: Sequence[int],
             total_paths: int = 100_000, seed: int = 0, *, mode: str = "mc",
             tolerance: float = C2_TOLERANCE, floor: float = C2_FLOOR,
             workers: int | None = None) -> ConditionReport:
    """Convergence of ``n^{1/2} P_y(tau > n, T_1 > n)`` along ``n_grid``.

    The gap is the change between the last two grid points relative to the
    last value, with ``floor`` guarding limits at zero.
    """
    ns = sorted(int(n) for n in n_grid)
    if len(ns) < 4:
        raise ValueError("n_grid needs at least 4 points")
    rows = []
    gaps, overlap = [], True
    for i, y in enumerate(y_grid):
        if mode == "dp":
            probs = dp_no_crossing_survival(y, law, mech, ns)
            cis = [(p, p) for p in probs]
        else:
            batch = run_paths(y, law, mech, total_paths, seed + i, horizon=ns[-1],
                              stop_at_crossing=True, workers=workers)
            # T_1 > n and tau > n: stopped after n, or never stopped before the horizon
            alive = batch.status == K.SURVIVED
            stop = np.sort(batch.end_time[~alive])
            counts = [total_paths - int(np.searchsorted(stop, n, side="right")) for n in ns]
            probs = [c / total_paths for c in counts]
            cis = [wilson(c, total_paths) for c in counts]
        vals = [math.sqrt(n) * p for n, p in zip(ns, probs)]
        for n, v, (lo, hi) in zip(ns, vals, cis):
            rows.append((float(y), n, v, math.sqrt(n) * lo, math.sqrt(n) * hi))
        gaps.append(_gap(vals[-2], vals[-1], floor))
        if mode != "dp":
            lo2, hi2 = (math.sqrt(ns[-2]) * c for c in cis[-2])
            lo1, hi1 = (math.sqrt(ns[-1]) * c for c in cis[-1])
            overlap &= lo1 <= hi2 and lo2 <= hi1
    gap = max(gaps) if gaps else 0.0
    fitted = {"gap": gap, "ci_overlap": bool(overlap), "mode": mode,
              "u_estimate": {str(float(y)): rows[(i + 1) * len(ns) - 1][2] for i, y in enumerate(y_grid)}}
    verdict = PASS if gap <= tolerance and overlap else FAIL
    return ConditionReport("C2", ("y", "n", "value", "ci_low", "ci_high"), rows, fitted, verdict,
                           {"tolerance": tolerance, "floor": floor})


def check_c3(x: float, law: IncrementLaw, mech: SegmentMechanism, n_grid: Sequence[int],
             total_paths: int = 100_000, seed: int = 0, *, mode: str = "mc",
             epsilon: float = C3_EPSILON, workers: int | None = None) -> ConditionReport:
    """Lower bound ``n^{1/2} P_x(tau > n) > epsilon`` along ``n_grid``."""
    ns = sorted(int(n) for n in n_grid)
    if len(ns) < 4:
        raise ValueError("n_grid needs at least 4 points")
    if mode == "dp":
        probs = dp_survival(x, law, mech, ns)
        cis = list(zip(probs, probs))
    else:
        curve = estimate_survival(x, law, mech, ns, total_paths, seed, workers=workers)
        probs = list(curve.estimates)
        cis = list(zip(curve.ci_low, curve.ci_high))
    rows = [(n, math.sqrt(n) * p, math.sqrt(n) * lo, math.sqrt(n) * hi)
            for n, p, (lo, hi) in zip(ns, probs, cis)]
    inf_value = min(r[1] for r in rows)
    inf_low = min(r[2] for r in rows)
    verdict = PASS if inf_low > epsilon else FAIL
    return ConditionReport("C3", ("n", "value", "ci_low", "ci_high"), rows,
                           {"inf": inf_value, "inf_ci_low": inf_low, "mode": mode}, verdict,
                           {"epsilon": epsilon})


@dataclass(frozen=True)
class Endpoints:
    """Rescaled endpoints ``S_n / (sigma n^{1/2})`` of surviving paths."""

    values: np.ndarray
    weights: np.ndarray
    n_survivors: int | None


def collect_endpoints(x: float, law: IncrementLaw, mech: SegmentMechanism, n: int,
                      survivor_target: int = 10_000, seed: int = 0, *, mode: str = "mc",
                      max_paths: int = 1 << 24, workers: int | None = None) -> Endpoints:
    scale = law.sigma * math.sqrt(n)
    if mode == "dp":
        dist = dp_endpoint_distribution(x, law, mech, n)
        return Endpoints(dist.positions / scale, dist.probs, None)
    finals: list[np.ndarray] = []
    found = start = 0
    while found < survivor_target and start < max_paths:
        size = min(C4_BATCH, max_paths - start)
        batch = run_paths(x, law, mech, size, seed, horizon=n, start=start, workers=workers)
        alive = batch.final_position[batch.status == K.SURVIVED]
        finals.append(alive)
        found += alive.size
        start += size
    if found < survivor_target:
        raise TooFewSurvivors(
            f"{found} survivors to n={n} after {start} paths; survivor_target is {survivor_target}")
    values = np.concatenate(finals) / scale
    return Endpoints(values, np.ones(values.size), found)


def check_c4_endpoint(x: float, law: IncrementLaw, mech: SegmentMechanism, n: int,
                      survivor_target: int = 10_000, seed: int = 0, *, mode: str = "mc",
                      ks_max: float = C4_KS_MAX, min_share: float = C4_MIN_CLASS_SHARE,
                      max_paths: int = 1 << 24, workers: int | None = None,
                      endpoints: Endpoints | None = None) -> ConditionReport:
    """Compare the sign classes of surviving endpoints with the Rayleigh law."""
    ep = endpoints or collect_endpoints(x, law, mech, n, survivor_target, seed, mode=mode,
                                        max_paths=max_paths, workers=workers)
    total = float(ep.weights.sum())
    rows, verdict = [], PASS
    fitted: dict = {"mode": mode, "survivors": ep.n_survivors}
    for sign, mask in (("nonneg", ep.values >= 0.0), ("neg", ep.values < 0.0)):
        share = float(ep.weights[mask].sum()) / total
        m = int(mask.sum())
        d = ks_statistic(np.abs(ep.values[mask]), rayleigh_cdf, ep.weights[mask]) if m else math.nan
        tested = share >= min_share
        if tested and not d <= ks_max:
            verdict = FAIL
        rows.append((sign, share, d, m, tested))
        fitted[f"ks_{sign}"] = d
    fitted["rho"] = rows[0][1]
    if ep.n_survivors is not None:
        lo, hi = wilson(int(round(rows[0][1] * ep.n_survivors)), ep.n_survivors)
        fitted["rho_ci"] = [lo, hi]
    return ConditionReport("C4", ("sign", "share", "ks", "m", "tested"), rows, fitted, verdict,
                           {"ks_max": ks_max, "min_share": min_share})
