"""Run configuration: one JSON document per experiment."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, IncompatibleMechanism
from .estimators import DEFAULT_K_MAX, default_horizons
from .mechanisms import build_mechanism
from .walk import IncrementLaw

MODES = ("mc", "dp", "both")


def _as_int(v: Any, name: str, lo: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if int(v) < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v!r}")
    return int(v)


def _as_floats(v: Any, name: str) -> list[float]:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{name} must be a nonempty list of numbers")
    try:
        return [float(a) for a in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain numbers only") from None


@dataclass
class RunConfig:
    """Validated experiment description.

    ``horizons`` is either an explicit strictly increasing list or
    ``{"n_min": a, "n_max": b}`` for the geometric sqrt(2) grid.
    """

    increment: dict
    mechanism: dict
    x: list[float] = field(default_factory=lambda: [0.0])
    horizons: Any = field(default_factory=lambda: {"n_min": 64, "n_max": 4096})
    total_paths: int = 100_000
    seed: int = 0
    mode: str = "mc"
    k_max: int = DEFAULT_K_MAX
    k_range: list[int] = field(default_factory=lambda: list(range(1, 9)))
    y_grid: list[float] = field(default_factory=lambda: [0.0])
    n_large: int = 16384
    u_range: list[float] = field(default_factory=lambda: [-50.0, 50.0])
    survivor_target: int = 10_000
    thresholds: dict = field(default_factory=dict)
    out: str = "out"

    def __post_init__(self):
        self.law = IncrementLaw.from_spec(self.increment)
        self.mech = build_mechanism(self.mechanism)
        self.increment = self.law.to_spec()
        self.mechanism = self.mech.to_spec()
        self.x = _as_floats(self.x, "x")
        self.y_grid = _as_floats(self.y_grid, "y_grid")
        self.u_range = _as_floats(self.u_range, "u_range")
        if len(self.u_range) != 2 or not self.u_range[0] < self.u_range[1]:
            raise ConfigError("u_range must be [lo, hi] with lo < hi")
        self.total_paths = _as_int(self.total_paths, "total_paths", 1)
        self.seed = _as_int(self.seed, "seed") & ((1 << 64) - 1)
        self.k_max = _as_int(self.k_max, "k_max")
        if not isinstance(self.k_range, list) or not self.k_range:
            raise ConfigError("k_range must be a nonempty list of crossing indices")
        self.k_range = [_as_int(k, "k_range entry", 1) for k in self.k_range]
        self.n_large = _as_int(self.n_large, "n_large", 1)
        self.survivor_target = _as_int(self.survivor_target, "survivor_target", 1)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.thresholds, dict):
            raise ConfigError("thresholds must be an object")
        if isinstance(self.horizons, dict):
            extra = set(self.horizons) - {"n_min", "n_max"}
            if extra or "n_max" not in self.horizons:
                raise ConfigError("horizons object takes 'n_max' and optional 'n_min'")
            self.horizons = {"n_min": _as_int(self.horizons.get("n_min", 64), "horizons.n_min", 1),
                             "n_max": _as_int(self.horizons["n_max"], "horizons.n_max", 1)}
        else:
            hs = [_as_int(h, "horizon") for h in (self.horizons if isinstance(self.horizons, list) else [])]
            if not hs or any(b <= a for a, b in zip(hs, hs[1:])):
                raise ConfigError("horizons must be a nonempty strictly increasing list or {n_min, n_max}")
            self.horizons = hs
        if not self.horizon_list():
            raise ConfigError(f"horizon grid {self.horizons} is empty")
        if self.mode != "mc":
            self.require_lattice()

    def require_lattice(self) -> None:
        if self.law.lattice_span is None:
            raise IncompatibleMechanism(f"dp mode needs lattice increments, got {self.law.kind}")

    def horizon_list(self) -> list[int]:
        if isinstance(self.horizons, dict):
            return default_horizons(self.horizons["n_max"], self.horizons["n_min"])
        return list(self.horizons)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def echo(self) -> dict:
        """Everything that determines the results (the output location does not)."""
        out = self.to_dict()
        del out["out"]
        return out

    @classmethod
    def from_dict(cls, raw: Any) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("increment", "mechanism"):
            if key not in raw:
                raise ConfigError(f"config is missing '{key}'")
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)
