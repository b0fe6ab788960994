"""Command-line front end.

Commands::

    aoifluid solve    --model JSON|--config FILE [--out DIR] [--grid SPEC]
    aoifluid simulate --model JSON|--config FILE [--cycles N] [--seed N] ...
    aoifluid sweep    --model JSON|--config FILE --sweep NAME=VALUES [--jobs N]
    aoifluid validate [--checks a,b] [--cycles N] [--out DIR]

Model JSON: ``{"model": "bufferless", "arrival": DIST, "service": DIST,
"p": 0.5}`` or ``{"model": "single_buffer", "arrival": RATE, "service": DIST,
"r": 1.0}`` where DIST is either ``{"mean": m, "scov": c}`` (two-moment fit),
``{"rate": mu}`` (exponential), or explicit ``{"alpha": [...], "S": [[...]],
"mass0": x}``.  A config file may carry ``model``, ``grid``, ``sweep``,
``seed``, ``cycles``, ``warmup``, ``jobs``, and ``out`` keys; command-line
flags override it.

Grid spec: ``MIN:MAX:POINTS[:linear|log]``.  Sweep spec: ``p=0,0.1,0.2`` or
``p=0:1:21`` (inclusive linspace) with parameter one of p, r, rho,
scov_theta, scov_lambda.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 validation
failure.  All commands are deterministic given their configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AoiFluidError, ModelInstabilityError, NumericalError
from .models import (
    AgeResult,
    BufferlessSpec,
    SingleBufferSpec,
    analyze_bufferless,
    analyze_single_buffer,
)
from .phdist import MeDistribution, PhDistribution, fit_mean_scov
from .simulator import SimConfig, simulate
from .validation import CHECK_NAMES, run_validate

__all__ = ["main", "run_solve", "run_simulate", "run_sweep", "run_validate_cli"]

SWEEP_PARAMETERS = ("p", "r", "rho", "scov_theta", "scov_lambda")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class GridSpec:
    xmin: float
    xmax: float
    points: int
    spacing: str = "linear"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            lo = self.xmin if self.xmin > 0 else self.xmax * 1e-6
            return np.geomspace(lo, self.xmax, self.points)
        return np.linspace(self.xmin, self.xmax, self.points)


def _parse_grid(text: str) -> GridSpec:
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise UsageError(f"grid must be MIN:MAX:POINTS[:linear|log], got {text!r}")
    try:
        xmin, xmax, points = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from exc
    spacing = parts[3] if len(parts) == 4 else "linear"
    if spacing not in ("linear", "log"):
        raise UsageError(f"grid spacing must be linear or log, got {spacing!r}")
    if points < 2:
        raise UsageError(f"grid needs at least 2 points, got {points}")
    if not xmax > xmin >= 0:
        raise UsageError(f"grid needs 0 <= MIN < MAX, got {text!r}")
    return GridSpec(xmin, xmax, points, spacing)


def _parse_sweep(text: str) -> tuple[str, list[float]]:
    if "=" not in text:
        raise UsageError(f"sweep must be NAME=VALUES, got {text!r}")
    name, _, rhs = text.partition("=")
    name = name.strip()
    if name not in SWEEP_PARAMETERS:
        raise UsageError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {name!r}")
    rhs = rhs.strip()
    try:
        if ":" in rhs:
            lo, hi, num = rhs.split(":")
            values = np.linspace(float(lo), float(hi), int(num)).tolist()
        else:
            values = [float(v) for v in rhs.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad sweep values {rhs!r}: {exc}") from exc
    if not values:
        raise UsageError("sweep value list is empty")
    for v in values:
        if name in ("p", "r") and not 0.0 <= v <= 1.0:
            raise UsageError(f"sweep value {v} outside [0,1] for parameter {name}")
        if name in ("rho", "scov_theta", "scov_lambda") and v <= 0.0:
            raise UsageError(f"sweep value {v} must be positive for parameter {name}")
    return name, values


def parse_distribution(obj) -> PhDistribution:
    """Build a phase-type distribution from its JSON form."""
    if isinstance(obj, (int, float)):
        if obj <= 0:
            raise UsageError(f"rate must be positive, got {obj}")
        return PhDistribution([1.0], [[-float(obj)]])
    if not isinstance(obj, dict):
        raise UsageError(f"distribution must be a number or an object, got {obj!r}")
    if "alpha" in obj:
        return PhDistribution(obj["alpha"], obj["S"], obj.get("mass0", 0.0))
    if "rate" in obj:
        return parse_distribution(obj["rate"])
    if "mean" in obj:
        return fit_mean_scov(float(obj["mean"]), float(obj.get("scov", 1.0)))
    raise UsageError(f"distribution object needs alpha/S, rate, or mean/scov keys: {obj!r}")


def parse_model(cfg: dict) -> BufferlessSpec | SingleBufferSpec:
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise UsageError("model config must be an object with a 'model' key")
    kind = cfg["model"]
    try:
        if kind == "bufferless":
            return BufferlessSpec(
                arrival=parse_distribution(cfg["arrival"]),
                service=parse_distribution(cfg["service"]),
                p=float(cfg.get("p", 0.0)),
            )
        if kind == "single_buffer":
            arrival = cfg["arrival"]
            if isinstance(arrival, dict):
                if "rate" in arrival:
                    arrival = arrival["rate"]
                else:
                    raise UsageError(
                        "single-buffer arrivals are Poisson: give a rate, not a distribution"
                    )
            return SingleBufferSpec(
                lam=float(arrival),
                service=parse_distribution(cfg["service"]),
                r=float(cfg.get("r", 0.0)),
            )
    except KeyError as exc:
        raise UsageError(f"model config is missing {exc}") from exc
    raise UsageError(f"model must be 'bufferless' or 'single_buffer', got {kind!r}")


def _apply_sweep(cfg: dict, name: str, value: float) -> dict:
    out = json.loads(json.dumps(cfg))  # deep copy
    kind = out.get("model")
    if name == "p":
        if kind != "bufferless":
            raise UsageError("parameter p applies to the bufferless model only")
        out["p"] = value
        return out
    if name == "r":
        if kind != "single_buffer":
            raise UsageError("parameter r applies to the single-buffer model only")
        out["r"] = value
        return out
    spec = parse_model(out)
    service = spec.service
    if name == "scov_theta":
        out["service"] = {"mean": service.mean, "scov": value}
    elif name == "rho":
        lam = spec.lam if isinstance(spec, SingleBufferSpec) else 1.0 / spec.arrival.mean
        out["service"] = {"mean": value / lam, "scov": service.scov}
    elif name == "scov_lambda":
        if kind != "bufferless":
            raise UsageError("parameter scov_lambda applies to the bufferless model only")
        out["arrival"] = {"mean": spec.arrival.mean, "scov": value}
    return out


def _analyze(cfg: dict) -> AgeResult:
    spec = parse_model(cfg)
    if isinstance(spec, BufferlessSpec):
        return analyze_bufferless(spec)
    return analyze_single_buffer(spec)


def _default_grid(res: AgeResult) -> GridSpec:
    return GridSpec(0.0, float(8.0 * res.mean_paoi), 201, "linear")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_grid_csv(path: Path, xs: np.ndarray, d: MeDistribution) -> None:
    pdf = d.pdf(xs)
    cdf = d.cdf(xs)
    with path.open("w") as fh:
        fh.write("x,pdf,cdf\n")
        for x, f, F in zip(xs, pdf, cdf):
            fh.write(f"{x:.6g},{f:.6g},{F:.6g}\n")


def run_solve(model_cfg: dict, out_dir: Path, grid: GridSpec | None = None) -> dict:
    """Solve one model; write result.json, aoi.csv, paoi.csv; return the summary."""
    res = _analyze(model_cfg)
    grid = grid or _default_grid(res)
    xs = grid.values()
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"model": model_cfg, **res.to_json()}
    _write_json(out_dir / "result.json", summary)
    _write_grid_csv(out_dir / "aoi.csv", xs, res.aoi)
    _write_grid_csv(out_dir / "paoi.csv", xs, res.paoi)
    return summary


def run_simulate(model_cfg: dict, out_dir: Path, grid: GridSpec | None = None,
                 cycles: int = 10**6, warmup: int = 10**3, seed: int = 1,
                 max_samples: int = 10**4) -> dict:
    """Simulate one model; write sim.json, aoi_cdf.csv, paoi_samples.csv."""
    spec = parse_model(model_cfg)
    if isinstance(spec, BufferlessSpec):
        cfg = SimConfig(model="bufferless", arrival=spec.arrival, service=spec.service,
                        p=spec.p, cycles=cycles, warmup=warmup, seed=seed)
    else:
        cfg = SimConfig(model="single_buffer",
                        arrival=PhDistribution([1.0], [[-spec.lam]]),
                        service=spec.service, r=spec.r,
                        cycles=cycles, warmup=warmup, seed=seed)
    result = simulate(cfg)
    if grid is None:
        xmax = float(np.quantile(result.peaks, 0.999) * 1.5)
        grid = GridSpec(0.0, xmax, 201, "linear")
    xs = grid.values()
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"model": model_cfg, "seed": seed, **result.to_json()}
    _write_json(out_dir / "sim.json", summary)
    cdf = result.aoi_cdf(xs)
    with (out_dir / "aoi_cdf.csv").open("w") as fh:
        fh.write("x,cdf\n")
        for x, F in zip(xs, cdf):
            fh.write(f"{x:.6g},{F:.6g}\n")
    stride = max(1, result.peaks.size // max_samples)
    with (out_dir / "paoi_samples.csv").open("w") as fh:
        fh.write("peak_age\n")
        for v in result.peaks[::stride]:
            fh.write(f"{v:.6g}\n")
    return summary


def _sweep_point(args: tuple[dict, str, float]) -> tuple[float, float]:
    cfg, name, value = args
    res = _analyze(_apply_sweep(cfg, name, value))
    return res.mean_aoi, res.mean_paoi


def run_sweep(model_cfg: dict, name: str, values: list[float], out_dir: Path,
              jobs: int | None = None) -> tuple[list[dict], bool]:
    """Sweep one parameter; write sweep.csv in input order; report failures."""
    for v in values:  # fail fast on usage-level mistakes before computing
        _apply_sweep(model_cfg, name, v)
    tasks = [(model_cfg, name, v) for v in values]
    jobs = int(jobs) if jobs is not None else (os.cpu_count() or 1)
    rows: list[dict] = []
    failed = False
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = []
            for task in tasks:
                outcomes.append(pool.submit(_sweep_point, task))
            results = []
            for fut in outcomes:
                try:
                    results.append(fut.result())
                except Exception as exc:
                    results.append(exc)
    else:
        results = []
        for task in tasks:
            try:
                results.append(_sweep_point(task))
            except Exception as exc:
                results.append(exc)
    for v, outcome in zip(values, results):
        if isinstance(outcome, Exception):
            rows.append({"value": v, "error": str(outcome)})
            failed = True
        else:
            rows.append({"value": v, "mean_aoi": outcome[0], "mean_paoi": outcome[1]})
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "sweep.csv").open("w") as fh:
        fh.write(f"{name},mean_aoi,mean_paoi\n")
        for row in rows:
            if "error" in row:
                fh.write(f"{row['value']:.6g},ERROR,ERROR\n")
            else:
                fh.write(f"{row['value']:.6g},{row['mean_aoi']:.6g},{row['mean_paoi']:.6g}\n")
    return rows, failed


def run_validate_cli(checks: list[str] | None, cycles: int, out_dir: Path | None,
                     stream=None) -> bool:
    stream = stream or sys.stdout
    results = run_validate(checks=checks, cycles=cycles)
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name} ({res.runtime:.2f}s)", file=stream)
        for line in res.lines:
            print(f"    {line}", file=stream)
    ok = all(r.passed for r in results)
    print(f"{'all checks passed' if ok else 'SOME CHECKS FAILED'} "
          f"({sum(r.passed for r in results)}/{len(results)})", file=stream)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "validate.json", [r.to_json() for r in results])
    return ok


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="aoifluid", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--model", help="inline model JSON")
        p.add_argument("--config", help="path to a JSON config file")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--grid", help="evaluation grid MIN:MAX:POINTS[:linear|log]")

    p = sub.add_parser("solve", help="exact age / peak-age distributions")
    add_model_flags(p)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    add_model_flags(p)
    p.add_argument("--cycles", type=int, default=10**6)
    p.add_argument("--warmup", type=int, default=10**3)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("sweep", help="sweep one parameter")
    add_model_flags(p)
    p.add_argument("--sweep", required=True, help="NAME=V1,V2,... or NAME=LO:HI:COUNT")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")

    p = sub.add_parser("validate", help="run the reference validation suite")
    p.add_argument("--checks", help=f"comma list from: {', '.join(CHECK_NAMES)}")
    p.add_argument("--cycles", type=int, default=10**6,
                   help="cycles for simulation-based checks (tolerances stay fixed)")
    p.add_argument("--out", default=None, help="also write validate.json here")
    return parser


def _load_model(args) -> tuple[dict, dict]:
    """Return (model config, file config) merging --config and --model."""
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
    model_cfg = file_cfg.get("model") if isinstance(file_cfg.get("model"), dict) else None
    if args.model:
        try:
            model_cfg = json.loads(args.model)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--model is not valid JSON: {exc}") from exc
    if model_cfg is None:
        raise UsageError("no model given: use --model JSON or --config FILE")
    return model_cfg, file_cfg


def _merged(args, file_cfg: dict, key: str, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return file_cfg.get(key, default)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "validate":
            checks = args.checks.split(",") if args.checks else None
            try:
                ok = run_validate_cli(checks, args.cycles,
                                      Path(args.out) if args.out else None)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            return 0 if ok else 3

        model_cfg, file_cfg = _load_model(args)
        out_dir = Path(_merged(args, file_cfg, "out", "out"))
        grid_text = _merged(args, file_cfg, "grid", None)
        grid = _parse_grid(grid_text) if isinstance(grid_text, str) else grid_text and GridSpec(**grid_text)

        if args.command == "solve":
            summary = run_solve(model_cfg, out_dir, grid)
            print(f"mean_aoi={summary['mean_aoi']:.6f} mean_paoi={summary['mean_paoi']:.6f} "
                  f"-> {out_dir}")
            return 0
        if args.command == "simulate":
            summary = run_simulate(
                model_cfg, out_dir, grid,
                cycles=int(_merged(args, file_cfg, "cycles", 10**6)),
                warmup=int(_merged(args, file_cfg, "warmup", 10**3)),
                seed=int(_merged(args, file_cfg, "seed", 1)),
            )
            print(f"sim mean_aoi={summary['mean_aoi']:.6f} (se {summary['se_mean_aoi']:.2g}) "
                  f"-> {out_dir}")
            return 0
        if args.command == "sweep":
            name, values = _parse_sweep(args.sweep)
            rows, failed = run_sweep(model_cfg, name, values, out_dir,
                                     jobs=_merged(args, file_cfg, "jobs", None))
            print(f"swept {name} over {len(values)} points -> {out_dir / 'sweep.csv'}")
            if failed:
                print("some sweep points failed (marked ERROR)", file=sys.stderr)
                return 2
            return 0
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ModelInstabilityError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except AoiFluidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
