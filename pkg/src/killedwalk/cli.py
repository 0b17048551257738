"""Command line front end.

Every subcommand reads one JSON config, writes ``summary.json`` plus CSV
tables into the output directory and exits with 0 (ok), 2 (config error) or
3 (runtime failure).  Outputs depend only on the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .config import RunConfig
from .errors import ConfigError, KilledWalkError, RuntimeFailure
from .estimators import (GridUProvider, TableUProvider, estimate_c, estimate_rho, estimate_survival,
                         estimate_u, estimate_V, fit_exponent, dp_curve)
from .limits import check_c1, check_c2, check_c3, check_c4_endpoint, collect_endpoints
from .oracle import dp_endpoint_distribution, dp_no_crossing_survival, dp_survival, dp_u
from .rng import RandomStream
from .walk import simulate_path

SUBCOMMANDS = ("simulate", "survival", "exponent", "c-const", "u-fn", "v-const", "rho", "oracle", "check")
CONDITIONS = ("c1", "c2", "c3", "c4")
SIMULATE_LIMIT = 100_000


def fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return "" if v is None else str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def versions() -> dict:
    out = {"python": platform.python_version()}
    for name, dist in (("killedwalk", "artifact"), ("numpy", "numpy"), ("numba", "numba"),
                       ("scipy", "scipy"), ("statsmodels", "statsmodels")):
        try:
            out[name] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[name] = None
    return out


def _z(diff: float, se: float) -> float:
    return diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))


class Runner:
    def __init__(self, cfg: RunConfig, out: Path, workers: int | None):
        self.cfg, self.out, self.workers = cfg, out, workers
        self.law, self.mech = cfg.law, cfg.mech
        self.results: dict = {}

    @property
    def mc(self) -> bool:
        return self.cfg.mode in ("mc", "both")

    @property
    def dp(self) -> bool:
        return self.cfg.mode in ("dp", "both")

    def csv(self, name: str, header, rows) -> None:
        write_csv(self.out / name, header, rows)

    def simulate(self) -> None:
        cfg = self.cfg
        n = cfg.horizon_list()[-1]
        count = min(cfg.total_paths, SIMULATE_LIMIT)
        paths, crossings = [], []
        for x in cfg.x:
            for i in range(count):
                po = simulate_path(x, self.law, self.mech, n, RandomStream.for_replicate(cfg.seed, i))
                paths.append((x, i, n, po.absorbed_at, po.final_position, po.endpoint_side, len(po.crossings) - 1))
                crossings.extend((x, i, c.k, c.time, c.height) for c in po.crossings)
        self.csv("paths.csv", ("x", "replicate", "horizon", "absorbed_at", "final_position",
                               "endpoint_side", "n_crossings"), paths)
        self.csv("crossings.csv", ("x", "replicate", "k", "time", "height"), crossings)
        self.results["paths"] = len(paths)
        self.results["absorbed"] = sum(p[3] is not None for p in paths)

    def _curves(self):
        hs = self.cfg.horizon_list()
        mc, dp = [], []
        for i, x in enumerate(self.cfg.x):
            if self.mc:
                mc.append(estimate_survival(x, self.law, self.mech, hs, self.cfg.total_paths,
                                            self.cfg.seed + i, workers=self.workers))
            if self.dp:
                dp.append(dp_curve(x, self.law, self.mech, hs))
        header = ("x", "n", "survivors", "total", "estimate", "ci_low", "ci_high")
        if self.cfg.mode == "dp":
            self.csv("survival.csv", header, (r for c in dp for r in c.rows()))
        else:
            self.csv("survival.csv", header, (r for c in mc for r in c.rows()))
        if self.cfg.mode == "both":
            self.csv("survival_dp.csv", header, (r for c in dp for r in c.rows()))
            rows = []
            for a, b in zip(mc, dp):
                for j, n in enumerate(a.horizons):
                    p = b.estimates[j]
                    se = math.sqrt(p * (1 - p) / a.total_paths)
                    diff = a.estimates[j] - p
                    rows.append((a.x, n, a.estimates[j], p, diff, se, _z(diff, se)))
            self.csv("differences.csv", ("x", "n", "mc", "dp", "difference", "se", "z"), rows)
            self.results["max_abs_z"] = max((abs(r[6]) for r in rows), default=0.0)
        return mc, dp

    def survival(self) -> None:
        mc, dp = self._curves()
        self.results["final"] = {
            "mc": [c.estimates[-1] for c in mc] or None,
            "dp": [c.estimates[-1] for c in dp] or None,
        }

    def exponent(self) -> None:
        mc, dp = self._curves()
        for label, curves in (("mc", mc), ("dp", dp)):
            if curves:
                fits = [fit_exponent(c) for c in curves]
                self.results[label] = [{"x": c.x, "slope": f.slope, "intercept": f.intercept,
                                        "slope_stderr": f.slope_stderr, "r_squared": f.r_squared,
                                        "points": f.n_points} for c, f in zip(curves, fits)]
        self.results["note"] = "grid points share paths; the fit treats them as independent"

    def c_const(self) -> None:
        rows = []
        for i, x in enumerate(self.cfg.x):
            e = estimate_c(x, self.law, self.cfg.total_paths, self.cfg.seed + i, workers=self.workers)
            rows.append((x, e.value, e.ci_low, e.ci_high, e.extra["mean_overshoot"], e.extra["censored"]))
        self.csv("c.csv", ("x", "value", "ci_low", "ci_high", "mean_overshoot", "censored"), rows)
        self.results["c"] = {fmt(r[0]): r[1] for r in rows}

    def u_fn(self) -> None:
        cfg = self.cfg
        rows, diffs = [], []
        for i, y in enumerate(cfg.y_grid):
            mc = dp = None
            if self.mc:
                mc = estimate_u(y, self.law, self.mech, cfg.n_large, cfg.total_paths, cfg.seed + i,
                                workers=self.workers)
                rows.append((y, cfg.n_large, mc.value, mc.ci_low, mc.ci_high, "mc"))
            if self.dp:
                dp = dp_u(y, self.law, self.mech, cfg.n_large)
                rows.append((y, cfg.n_large, dp, dp, dp, "dp"))
            if mc is not None and dp is not None:
                p = dp / math.sqrt(cfg.n_large)
                se = math.sqrt(cfg.n_large * p * (1 - p) / cfg.total_paths)
                diffs.append((y, mc.value, dp, mc.value - dp, se, _z(mc.value - dp, se)))
        self.csv("u.csv", ("y", "n", "value", "ci_low", "ci_high", "source"), rows)
        if diffs:
            self.csv("differences.csv", ("y", "mc", "dp", "difference", "se", "z"), diffs)
        self.results["u"] = [{"y": r[0], "source": r[5], "value": r[2]} for r in rows]

    def _u_provider(self):
        cfg = self.cfg
        lo, hi = cfg.u_range
        if self.law.lattice_span is not None:
            return GridUProvider(self.law, self.mech, cfg.n_large, lo, hi)
        heights = cfg.y_grid if len(cfg.y_grid) >= 2 else [lo, hi]
        vals = [estimate_u(y, self.law, self.mech, cfg.n_large, cfg.total_paths, cfg.seed + 1000 + i,
                           workers=self.workers).value for i, y in enumerate(heights)]
        return TableUProvider(heights, vals)

    def v_const(self) -> None:
        cfg = self.cfg
        provider = self._u_provider()
        rows, values = [], []
        for i, x in enumerate(cfg.x):
            v = estimate_V(x, self.law, self.mech, provider, cfg.k_max, cfg.total_paths, cfg.seed + i,
                           workers=self.workers)
            rows.extend((x, k, t, c) for k, (t, c) in enumerate(zip(v.terms, v.ci)))
            entry = {"x": x, "value": v.value, "tail_bound_ratio": v.tail_bound_ratio, "terms": len(v.terms)}
            if self.dp:
                entry["sqrt_n_dp_survival"] = math.sqrt(cfg.n_large) * dp_survival(
                    x, self.law, self.mech, [cfg.n_large])[0]
            values.append(entry)
        self.csv("v_terms.csv", ("x", "k", "term", "ci"), rows)
        self.results["V"] = values

    def rho(self) -> None:
        cfg = self.cfg
        n = cfg.horizon_list()[-1]
        rows = []
        for i, x in enumerate(cfg.x):
            if self.mc:
                e = estimate_rho(x, self.law, self.mech, n, cfg.total_paths, cfg.seed + i, workers=self.workers)
                rows.append((x, n, e.value, e.ci_low, e.ci_high, e.extra["survivors"], "mc"))
            if self.dp:
                d = dp_endpoint_distribution(x, self.law, self.mech, n)
                r = float(d.probs[d.positions >= 0].sum())
                rows.append((x, n, r, r, r, None, "dp"))
        self.csv("rho.csv", ("x", "n", "value", "ci_low", "ci_high", "survivors", "source"), rows)
        self.results["rho"] = [{"x": r[0], "source": r[6], "value": r[2]} for r in rows]

    def oracle(self) -> None:
        cfg = self.cfg
        cfg.require_lattice()
        hs = cfg.horizon_list()
        rows = []
        for x in cfg.x:
            rows.extend(("survival", x, n, p) for n, p in zip(hs, dp_survival(x, self.law, self.mech, hs)))
        for y in cfg.y_grid:
            rows.extend(("no_crossing", y, n, p)
                        for n, p in zip(hs, dp_no_crossing_survival(y, self.law, self.mech, hs)))
        self.csv("oracle.csv", ("quantity", "start", "n", "value"), rows)
        self.results["rows"] = len(rows)

    def check(self, which: str) -> None:
        cfg, th = self.cfg, self.cfg.thresholds
        hs = cfg.horizon_list()
        mode = "dp" if cfg.mode == "dp" else "mc"
        x = cfg.x[0]
        if which == "c1":
            rep = check_c1(x, self.law, self.mech, cfg.k_range, cfg.total_paths, cfg.seed,
                           r2_min=th.get("r2_min", 0.98), workers=self.workers)
        elif which == "c2":
            rep = check_c2(cfg.y_grid, self.law, self.mech, hs, cfg.total_paths, cfg.seed, mode=mode,
                           tolerance=th.get("tolerance", 0.05), floor=th.get("floor", 0.01),
                           workers=self.workers)
        elif which == "c3":
            rep = check_c3(x, self.law, self.mech, hs, cfg.total_paths, cfg.seed, mode=mode,
                           epsilon=th.get("epsilon", 0.05), workers=self.workers)
        else:
            n = hs[-1]
            kw = dict(ks_max=th.get("ks_max", 0.05), min_share=th.get("min_share", 0.05))
            ep = collect_endpoints(x, self.law, self.mech, n, cfg.survivor_target, cfg.seed, mode=mode,
                                   max_paths=cfg.total_paths, workers=self.workers)
            rep = check_c4_endpoint(x, self.law, self.mech, n, cfg.survivor_target, cfg.seed, mode=mode,
                                    endpoints=ep, **kw)
            signs = np.where(ep.values >= 0.0, "nonneg", "neg")
            if mode == "dp":
                self.csv("endpoints.csv", ("value", "sign", "weight"), zip(ep.values, signs, ep.weights))
            else:
                self.csv("endpoints.csv", ("value", "sign"), zip(ep.values, signs))
        self.csv(f"conditions_{which}.csv", rep.columns, rep.table)
        self.results["report"] = rep.to_dict()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--workers", type=int, help="worker threads (default: available cores)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--paths", type=int, help="override total_paths")
    common.add_argument("--mode", choices=("mc", "dp", "both"))
    parser = argparse.ArgumentParser(prog="killedwalk", description="Killed random walk laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "check":
            p.add_argument("condition", choices=CONDITIONS)
    return parser


def _out_dir(args, raw: Any) -> Path:
    if args.out:
        return Path(args.out)
    if isinstance(raw, dict) and isinstance(raw.get("out"), str):
        return Path(raw["out"])
    return Path("out")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command + (f" {args.condition}" if args.command == "check" else "")
    summary: dict = {"command": command}
    raw: Any = None
    out = Path(args.out) if args.out else None
    code = 0
    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        out = _out_dir(args, raw)
        if isinstance(raw, dict):
            for key, val in (("seed", args.seed), ("total_paths", args.paths), ("mode", args.mode),
                             ("out", args.out)):
                if val is not None:
                    raw[key] = val
        cfg = RunConfig.from_dict(raw)
        out.mkdir(parents=True, exist_ok=True)
        summary["config"] = cfg.echo()
        summary["seed"] = cfg.seed
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        runner = Runner(cfg, out, args.workers)
        if args.command == "check":
            runner.check(args.condition)
        else:
            getattr(runner, args.command.replace("-", "_"))()
        summary["status"] = "ok"
        summary["results"] = runner.results
    except (ConfigError, ValueError) as exc:
        code = 2
        kind = exc.kind if isinstance(exc, KilledWalkError) else "config-error"
        summary.update(status="error", error={"kind": kind, "message": str(exc)})
    except RuntimeFailure as exc:
        code = 3
        summary.update(status="error", error={"kind": exc.kind, "message": str(exc)})
    summary["versions"] = versions()
    if code:
        print(f"killedwalk: {summary['error']['kind']}: {summary['error']['message']}", file=sys.stderr)
    if out is None:
        out = Path("out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2) + "\n")
    except OSError as exc:
        print(f"killedwalk: cannot write summary: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
