"""Monte Carlo estimators for persistence quantities.

Survival curves, the power-law exponent, the first-crossing constant ``c_x``,
the no-crossing limit ``u(y)``, the series constant ``V(x)`` and the
endpoint-sign weight ``rho``.  Every estimator is deterministic in ``seed``
regardless of the number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import statsmodels.api as sm
from statsmodels.stats.proportion import proportion_confint

from . import _kernels as K
from .errors import StepCapExceeded, TooFewSurvivors, UProviderError, ZeroSurvival
from .mechanisms import SegmentMechanism, analytic_u, build_mechanism, kills_at_start
from .oracle import dp_survival, dp_u
from .walk import DEFAULT_STEP_CAP, IncrementLaw, run_paths

ALPHA = 0.05
DEFAULT_K_MAX = 30
# fraction of paths allowed to hit the per-path step cap before a run is rejected
CENSOR_TOLERANCE = 1e-2
MIN_SURVIVORS = 100


def wilson(successes: int, total: int) -> tuple[float, float]:
    lo, hi = proportion_confint(successes, total, alpha=ALPHA, method="wilson")
    return float(lo), float(hi)


def default_horizons(n_max: int, n_min: int = 64) -> list[int]:
    """Geometric grid ``round(n_min * sqrt(2)**j)`` up to ``n_max``."""
    out: list[int] = []
    j = 0
    while True:
        n = int(round(n_min * math.sqrt(2.0) ** j))
        if n > n_max:
            break
        if not out or n > out[-1]:
            out.append(n)
        j += 1
    return out


@dataclass(frozen=True)
class Estimate:
    """Scalar estimate with a 95% confidence interval."""

    value: float
    ci_low: float
    ci_high: float
    n_paths: int = 0
    extra: dict = field(default_factory=dict)

    def covers(self, v: float) -> bool:
        return self.ci_low <= v <= self.ci_high


@dataclass(frozen=True)
class SurvivalCurve:
    x: float
    horizons: tuple[int, ...]
    survivors: tuple[int, ...] | None
    total_paths: int | None
    estimates: tuple[float, ...]
    ci_low: tuple[float, ...]
    ci_high: tuple[float, ...]

    @classmethod
    def exact(cls, x: float, horizons: Sequence[int], values: Sequence[float]) -> "SurvivalCurve":
        """Curve of exact (oracle or synthetic) values, zero-width intervals."""
        v = tuple(float(p) for p in values)
        return cls(float(x), tuple(int(h) for h in horizons), None, None, v, v, v)

    def rows(self):
        for j, n in enumerate(self.horizons):
            surv = self.survivors[j] if self.survivors is not None else ""
            total = self.total_paths if self.total_paths is not None else ""
            yield self.x, n, surv, total, self.estimates[j], self.ci_low[j], self.ci_high[j]


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    n_points: int = 0


@dataclass(frozen=True)
class VEstimate:
    x: float
    terms: tuple[float, ...]
    ci: tuple[float, ...]
    k_max: int
    value: float
    tail_bound_ratio: float
    total_paths: int


def estimate_survival(x: float, law: IncrementLaw, mech: SegmentMechanism, horizons: Sequence[int],
                      total_paths: int, seed: int, workers: int | None = None) -> SurvivalCurve:
    hs = [int(h) for h in horizons]
    if any(b <= a for a, b in zip(hs, hs[1:])) or not hs or hs[0] < 0:
        raise ValueError("horizons must be nonnegative and strictly increasing")
    if total_paths < 1:
        raise ValueError("total_paths must be >= 1")
    batch = run_paths(x, law, mech, total_paths, seed, horizon=hs[-1], workers=workers)
    killed = np.sort(batch.end_time[batch.status == K.KILLED])
    # tau > n  <=>  never killed, or killed after n
    dead = np.searchsorted(killed, np.array(hs), side="right")
    survivors = [int(total_paths - d) for d in dead]
    ci = [wilson(s, total_paths) for s in survivors]
    return SurvivalCurve(float(x), tuple(hs), tuple(survivors), int(total_paths),
                         tuple(s / total_paths for s in survivors),
                         tuple(c[0] for c in ci), tuple(c[1] for c in ci))


def dp_curve(x: float, law: IncrementLaw, mech: SegmentMechanism, horizons: Sequence[int]) -> SurvivalCurve:
    return SurvivalCurve.exact(x, horizons, dp_survival(x, law, mech, horizons))


def _wls(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None) -> tuple[float, float, float, float]:
    X = sm.add_constant(x)
    res = sm.WLS(y, X, weights=weights).fit() if weights is not None else sm.OLS(y, X).fit()
    intercept, slope = (float(v) for v in res.params)
    se = float(res.bse[1]) if len(x) > 2 else math.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = float(res.rsquared)
    if not math.isfinite(r2):
        # constant response is fitted perfectly
        r2 = 1.0 if np.allclose(res.resid, 0.0) else 0.0
    return slope, intercept, se, min(max(r2, 0.0), 1.0)


def fit_exponent(curve: SurvivalCurve, n_min: int | None = None, n_max: int | None = None) -> ExponentFit:
    """Weighted least squares of ``log P`` on ``log n``.

    Weights are the inverse delta-method variances ``p N / (1 - p)``; exact
    curves (no path count) are fitted with equal weights.
    """
    n = np.array(curve.horizons, dtype=float)
    p = np.array(curve.estimates, dtype=float)
    keep = np.ones(n.size, dtype=bool)
    if n_min is not None:
        keep &= n >= n_min
    if n_max is not None:
        keep &= n <= n_max
    n, p = n[keep], p[keep]
    if n.size < 2:
        raise ValueError("need at least two horizons to fit an exponent")
    if np.any(p <= 0.0):
        bad = int(n[np.argmax(p <= 0.0)])
        raise ZeroSurvival(f"zero survival estimate at n={bad}; exponent fit undefined")
    weights = None
    if curve.total_paths is not None:
        var = np.maximum((1.0 - p) / (p * curve.total_paths), 1.0 / curve.total_paths**2)
        weights = 1.0 / var
    slope, intercept, se, r2 = _wls(np.log(n), np.log(p), weights)
    return ExponentFit(slope, intercept, se, r2, int(n.size))


def _censor_check(n_capped: int, total: int, step_cap: int, what: str) -> None:
    if n_capped > CENSOR_TOLERANCE * total:
        raise StepCapExceeded(
            f"{what}: {n_capped} of {total} paths hit the step cap of {step_cap} steps "
            f"(tolerance {CENSOR_TOLERANCE:g}); the walk is probably misconfigured")


def estimate_c(x: float, law: IncrementLaw, total_paths: int, seed: int, *,
               step_cap: int = DEFAULT_STEP_CAP, workers: int | None = None) -> Estimate:
    """``sqrt(2) |x - E_x[S_{T_1}]| / (sigma sqrt(pi))`` from simulated first crossings."""
    batch = run_paths(x, law, build_mechanism({"family": "never-absorb"}), total_paths, seed,
                      stop_at_crossing=True, step_cap=step_cap, workers=workers)
    crossed = batch.status == K.CROSSED
    n_capped = int(total_paths - crossed.sum())
    _censor_check(n_capped, total_paths, step_cap, "first crossing")
    heights = batch.crossing_heights[crossed, 1]
    mean = float(heights.mean())
    sem = float(heights.std(ddof=1) / math.sqrt(heights.size)) if heights.size > 1 else 0.0
    scale = math.sqrt(2.0) / (law.sigma * math.sqrt(math.pi))
    value = scale * abs(x - mean)
    half = 1.959963984540054 * scale * sem
    return Estimate(value, max(value - half, 0.0), value + half, total_paths,
                    {"mean_overshoot": mean, "overshoot_sem": sem, "censored": n_capped})


def estimate_u(y: float, law: IncrementLaw, mech: SegmentMechanism, n_large: int, total_paths: int,
               seed: int, *, c_provider: Callable[[float], float] | None = None,
               workers: int | None = None) -> Estimate:
    """``n^{1/2} P_y(tau > n, T_1 > n)`` at ``n = n_large``.

    With a ``c_provider`` the closed form is used where the mechanism has
    one (zero-width interval).
    """
    if n_large < 1:
        raise ValueError("n_large must be >= 1")
    if c_provider is not None:
        v = analytic_u(mech, y, c_provider)
        if v is not None:
            return Estimate(v, v, v, 0, {"source": "analytic"})
    if kills_at_start(mech, y):
        return Estimate(0.0, 0.0, 0.0, 0, {"source": "killed-at-start"})
    batch = run_paths(y, law, mech, total_paths, seed, horizon=n_large, stop_at_crossing=True,
                      workers=workers)
    hits = int((batch.status == K.SURVIVED).sum())
    lo, hi = wilson(hits, total_paths)
    r = math.sqrt(n_large)
    return Estimate(r * hits / total_paths, r * lo, r * hi, total_paths,
                    {"source": "mc", "survivors": hits})


class GridUProvider:
    """``u(y)`` from exact no-crossing survival at ``n_large``.

    Values are computed lazily at integer multiples of the lattice span in
    ``[lo, hi]`` and linearly interpolated in between; queries outside the
    range raise :class:`UProviderError`.
    """

    def __init__(self, law: IncrementLaw, mech: SegmentMechanism, n_large: int, lo: float, hi: float):
        if law.lattice_span is None:
            raise ValueError("grid provider needs a lattice law")
        self.law, self.mech, self.n_large = law, mech, int(n_large)
        self.lo, self.hi = float(lo), float(hi)
        self.span = law.lattice_span
        self._cache: dict[int, float] = {}

    def node(self, j: int) -> float:
        if j not in self._cache:
            self._cache[j] = dp_u(j * self.span, self.law, self.mech, self.n_large)
        return self._cache[j]

    def __call__(self, y: float) -> float:
        y = float(y)
        if not self.lo <= y <= self.hi:
            raise UProviderError(f"u requested at height {y!r} outside [{self.lo}, {self.hi}]", height=y)
        t = y / self.span
        j = math.floor(t)
        frac = t - j
        if frac < 1e-9:
            return self.node(j)
        if frac > 1.0 - 1e-9:
            return self.node(j + 1)
        return (1.0 - frac) * self.node(j) + frac * self.node(j + 1)


class TableUProvider:
    """``u(y)`` interpolated linearly from values at fixed heights."""

    def __init__(self, heights: Sequence[float], values: Sequence[float]):
        order = np.argsort(np.asarray(heights, dtype=float))
        self.heights = np.asarray(heights, dtype=float)[order]
        self.values = np.asarray(values, dtype=float)[order]

    def __call__(self, y: float) -> float:
        if not self.heights[0] <= y <= self.heights[-1]:
            raise UProviderError(
                f"u requested at height {y!r} outside [{self.heights[0]}, {self.heights[-1]}]", height=y)
        return float(np.interp(y, self.heights, self.values))


def _geometric_ratio(terms: np.ndarray) -> float:
    k = np.nonzero(np.abs(terms) > 0.0)[0]
    k = k[k >= 1]
    if k.size < 2:
        return 0.0
    slope, *_ = _wls(k.astype(float), np.log(np.abs(terms[k])), None)
    return math.exp(slope)


def estimate_V(x: float, law: IncrementLaw, mech: SegmentMechanism, u_provider: Callable[[float], float],
               k_max: int = DEFAULT_K_MAX, total_paths: int = 100_000, seed: int = 0, *,
               step_cap: int = DEFAULT_STEP_CAP, workers: int | None = None) -> VEstimate:
    """Partial sum of ``E_x[u(H_k); tau >= T_k]`` over ``k <= k_max``."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    batch = run_paths(x, law, mech, total_paths, seed, k_max=k_max, step_cap=step_cap, workers=workers)
    _censor_check(int((batch.status == K.CAPPED).sum()), total_paths, step_cap, "crossing chain")
    cache: dict[float, float] = {}

    def u(h: float) -> float:
        if h not in cache:
            cache[h] = float(u_provider(h))
        return cache[h]

    terms, ci = [], []
    for k in range(k_max + 1):
        reached = batch.n_crossings >= k
        if not reached.any():
            break
        vals = np.zeros(total_paths)
        vals[reached] = [u(h) for h in batch.crossing_heights[reached, k].tolist()]
        mean = float(vals.mean())
        sem = float(vals.std(ddof=1) / math.sqrt(total_paths)) if total_paths > 1 else 0.0
        terms.append(mean)
        ci.append(1.959963984540054 * sem)
    arr = np.array(terms)
    return VEstimate(float(x), tuple(terms), tuple(ci), int(k_max), float(arr.sum()),
                     _geometric_ratio(arr), int(total_paths))


def estimate_rho(x: float, law: IncrementLaw, mech: SegmentMechanism, n: int, total_paths: int,
                 seed: int, workers: int | None = None) -> Estimate:
    """Fraction of paths surviving to ``n`` that end on the nonnegative side."""
    batch = run_paths(x, law, mech, total_paths, seed, horizon=n, workers=workers)
    alive = batch.status == K.SURVIVED
    m = int(alive.sum())
    if m < MIN_SURVIVORS:
        raise TooFewSurvivors(f"only {m} of {total_paths} paths survive to n={n}; need {MIN_SURVIVORS}")
    pos = int((batch.final_position[alive] >= 0.0).sum())
    lo, hi = wilson(pos, m)
    return Estimate(pos / m, lo, hi, total_paths, {"survivors": m, "nonneg": pos})
