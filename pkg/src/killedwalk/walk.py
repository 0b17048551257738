"""Random walks with segment-wise absorption.

Positions ``S_0 = x, S_{m+1} = S_m + X_{m+1}``; the walk is split into
segments at zero-crossings (zero belongs to the nonnegative side) and the
mechanism's kill predicate is evaluated at every time ``m >= 0`` with the age
``m - T_k`` of the active segment.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, reduce
from typing import Any, Mapping

import numpy as np

from . import _kernels as K
from .errors import InvalidSpec
from .mechanisms import SegmentMechanism
from .rng import RandomStream

KINDS = ("rademacher", "lattice-pmf", "gaussian", "uniform-centered")
NONNEG = "nonneg"
NEG = "neg"

DEFAULT_STEP_CAP = 10**7
BLOCK = 4096


def side_of(position: float) -> str:
    return NONNEG if position >= 0 else NEG


def _exact(v: Any) -> Fraction:
    if isinstance(v, str):
        return Fraction(v.strip())
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    return Fraction(repr(float(v)))


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


@dataclass(frozen=True)
class IncrementLaw:
    """Law of one step ``X_1``: mean zero, finite positive variance.

    ``support``/``probs`` are filled for the lattice kinds; ``scale`` is the
    standard deviation for ``gaussian`` and the half-width for
    ``uniform-centered``.
    """

    kind: str
    variance: float
    lattice_span: float | None = None
    support: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()
    scale: float = 0.0

    mean = 0.0

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def params(self) -> dict:
        if self.kind == "lattice-pmf":
            return {"pmf": {repr(v): p for v, p in zip(self.support, self.probs)}}
        if self.kind == "gaussian":
            return {"sigma": self.scale}
        if self.kind == "uniform-centered":
            return {"half_width": self.scale}
        return {}

    @classmethod
    def rademacher(cls) -> "IncrementLaw":
        return cls("rademacher", 1.0, 1.0, (-1.0, 1.0), (0.5, 0.5))

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "IncrementLaw":
        if not sigma > 0 or not math.isfinite(sigma):
            raise InvalidSpec(f"gaussian: sigma must be finite and > 0, got {sigma!r}")
        return cls("gaussian", float(sigma) ** 2, None, scale=float(sigma))

    @classmethod
    def uniform_centered(cls, half_width: float = 1.0) -> "IncrementLaw":
        if not half_width > 0 or not math.isfinite(half_width):
            raise InvalidSpec(f"uniform-centered: half_width must be finite and > 0, got {half_width!r}")
        return cls("uniform-centered", float(half_width) ** 2 / 3.0, None, scale=float(half_width))

    @classmethod
    def lattice(cls, pmf: Mapping | list) -> "IncrementLaw":
        """Finite pmf; mean and normalisation are checked in exact arithmetic."""
        items = list(pmf.items()) if isinstance(pmf, Mapping) else [tuple(p) for p in pmf]
        merged: dict[Fraction, Fraction] = {}
        for v, p in items:
            try:
                fv, fp = _exact(v), _exact(p)
            except (ValueError, ZeroDivisionError, TypeError):
                raise InvalidSpec(f"lattice-pmf: bad entry {v!r}: {p!r}") from None
            if fp < 0:
                raise InvalidSpec(f"lattice-pmf: negative probability at {v!r}")
            merged[fv] = merged.get(fv, Fraction(0)) + fp
        merged = {v: p for v, p in merged.items() if p > 0}
        if not merged:
            raise InvalidSpec("lattice-pmf: empty support")
        total = sum(merged.values())
        if abs(total - 1) > Fraction(1, 10**12):
            raise InvalidSpec(f"lattice-pmf: probabilities sum to {float(total)!r}, not 1")
        mean = sum(v * p for v, p in merged.items()) / total
        if abs(mean) > Fraction(1, 10**12):
            raise InvalidSpec(f"lattice-pmf: mean is {float(mean)!r}, not 0")
        var = sum(v * v * p for v, p in merged.items()) / total - mean * mean
        if var <= 0:
            raise InvalidSpec("lattice-pmf: variance must be > 0")
        nonzero = [v for v in merged if v != 0]
        num = reduce(math.gcd, (abs(v.numerator) for v in nonzero))
        den = reduce(_lcm, (v.denominator for v in nonzero))
        support = tuple(sorted(merged))
        return cls("lattice-pmf", float(var), float(Fraction(num, den)),
                   tuple(float(v) for v in support),
                   tuple(float(merged[v] / total) for v in support))

    @classmethod
    def from_spec(cls, spec: Mapping | "IncrementLaw") -> "IncrementLaw":
        if isinstance(spec, IncrementLaw):
            return spec
        if not isinstance(spec, Mapping):
            raise InvalidSpec("increment spec must be a mapping")
        kind = spec.get("kind")
        if kind == "rademacher":
            return cls.rademacher()
        if kind == "gaussian":
            return cls.gaussian(float(spec.get("sigma", 1.0)))
        if kind == "uniform-centered":
            return cls.uniform_centered(float(spec.get("half_width", 1.0)))
        if kind == "lattice-pmf":
            if "pmf" not in spec:
                raise InvalidSpec("lattice-pmf: missing 'pmf'")
            return cls.lattice(spec["pmf"])
        raise InvalidSpec(f"unknown increment kind {kind!r}; expected one of {KINDS}")

    def to_spec(self) -> dict:
        return {"kind": self.kind, **self.params}

    def lattice_steps(self) -> tuple[np.ndarray, np.ndarray]:
        """Support in lattice units (integers) and matching probabilities."""
        if self.lattice_span is None:
            raise InvalidSpec(f"{self.kind} increments are not lattice-valued")
        steps = np.rint(np.array(self.support) / self.lattice_span).astype(np.int64)
        return steps, np.array(self.probs)

    @cached_property
    def kernel_args(self) -> tuple:
        code = {"rademacher": K.RADEMACHER, "lattice-pmf": K.LATTICE,
                "gaussian": K.GAUSSIAN, "uniform-centered": K.UNIFORM}[self.kind]
        vals = np.array(self.support or (0.0,), dtype=np.float64)
        cum = np.cumsum(np.array(self.probs or (1.0,), dtype=np.float64))
        cum[-1] = 1.0
        return code, float(self.scale), vals, cum


def sample_increment(law: IncrementLaw, stream: RandomStream) -> float:
    code, scale, vals, cum = law.kernel_args
    x, ctr = K.draw_increment(code, scale, vals, cum, np.uint64(stream.key), np.int64(stream.counter))
    stream.counter = int(ctr)
    return float(x)


@dataclass(frozen=True)
class CrossingRecord:
    k: int
    time: int
    height: float


@dataclass(frozen=True)
class PathOutcome:
    absorbed_at: int | None
    horizon: int
    crossings: tuple[CrossingRecord, ...]
    final_position: float
    trajectory: tuple[float, ...] | None = None

    @property
    def endpoint_side(self) -> str:
        return side_of(self.final_position)

    @property
    def survived(self) -> bool:
        return self.absorbed_at is None


def simulate_path(x: float, law: IncrementLaw, mech: SegmentMechanism, horizon: int,
                  stream: RandomStream, keep_trajectory: bool = False) -> PathOutcome:
    """Simulate one path up to ``horizon`` steps, stopping at absorption.

    The path consumes ``stream`` from its current counter; a fresh
    ``RandomStream.for_replicate(seed, i)`` reproduces replicate ``i`` of
    :func:`run_paths` with the same seed.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rec_t = np.zeros(horizon + 1, dtype=np.int64)
    rec_h = np.zeros(horizon + 1, dtype=np.float64)
    traj = np.zeros(horizon + 1 if keep_trajectory else 0, dtype=np.float64)
    t, pos, nc, status, ctr = K.run_path(
        float(x), *law.kernel_args, *mech.kernel_args,
        horizon, DEFAULT_STEP_CAP, False, -1,
        np.uint64(stream.key), np.int64(stream.counter), rec_t, rec_h, traj)
    stream.counter = int(ctr)
    crossings = tuple(CrossingRecord(k, int(rec_t[k]), float(rec_h[k])) for k in range(nc + 1))
    return PathOutcome(
        absorbed_at=int(t) if status == K.KILLED else None,
        horizon=horizon,
        crossings=crossings,
        final_position=float(pos),
        trajectory=tuple(traj[: int(t) + 1].tolist()) if keep_trajectory else None,
    )


@dataclass(frozen=True)
class PathBatch:
    """Per-replicate results of a batch run, indexed by replicate number."""

    end_time: np.ndarray
    final_position: np.ndarray
    n_crossings: np.ndarray
    status: np.ndarray
    crossing_times: np.ndarray
    crossing_heights: np.ndarray

    def __len__(self) -> int:
        return self.end_time.size


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_paths(x: float, law: IncrementLaw, mech: SegmentMechanism, n_paths: int, seed: int,
              horizon: int = -1, *, stop_at_crossing: bool = False, k_max: int = -1,
              step_cap: int = DEFAULT_STEP_CAP, workers: int | None = None,
              start: int = 0) -> PathBatch:
    """Simulate replicates ``start .. start + n_paths - 1``.

    Index ranges are handed to a thread pool; each replicate is a pure function
    of ``(seed, index)``, so outputs do not depend on ``workers``.  With
    ``horizon < 0`` paths run until absorption, ``k_max`` crossings,
    the first crossing (``stop_at_crossing``) or ``step_cap`` steps.
    """
    if horizon < 0 and not stop_at_crossing and k_max < 0:
        raise ValueError("unbounded run: give a horizon, k_max or stop_at_crossing")
    n_rec = k_max + 1 if k_max >= 0 else (2 if stop_at_crossing else 0)
    end_time = np.empty(n_paths, dtype=np.int64)
    final = np.empty(n_paths, dtype=np.float64)
    ncross = np.empty(n_paths, dtype=np.int64)
    status = np.empty(n_paths, dtype=np.int64)
    rec_t = np.zeros((n_paths, n_rec), dtype=np.int64)
    rec_h = np.zeros((n_paths, n_rec), dtype=np.float64)
    largs = law.kernel_args
    margs = mech.kernel_args
    no_traj = np.empty(0, dtype=np.float64)
    seed64 = np.uint64(int(seed) & ((1 << 64) - 1))

    def work(lo: int) -> None:
        hi = min(lo + BLOCK, n_paths)
        K.run_block(float(x), *largs, *margs, int(horizon), int(step_cap), bool(stop_at_crossing),
                    int(k_max), seed64, np.int64(start + lo),
                    end_time[lo:hi], final[lo:hi], ncross[lo:hi], status[lo:hi],
                    rec_t[lo:hi], rec_h[lo:hi], no_traj)

    starts = range(0, n_paths, BLOCK)
    n_workers = workers or default_workers()
    if n_workers <= 1:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(work, starts))
    return PathBatch(end_time, final, ncross, status, rec_t, rec_h)
