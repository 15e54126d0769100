"""Command-line entry point.

Subcommands: ``analyze``, ``nyquist``, ``frontier``, ``simulate`` and
``compare``. Tables are written as CSV (LF endings, fixed header, 9
significant digits) or JSON (sorted keys); reruns with the same inputs give
byte-identical files.

Exit codes: 0 ok, 1 usage or configuration error, 2 unstable loop,
3 marginal loop, 4 diverged simulation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .metrics import compute_metrics
from .scenario import ScenarioConfig, ScenarioError, load_scenario
from .simulator import run_scenario
from .stability import (
    DelayPlant,
    MarginalStabilityError,
    StabilityError,
    analyze,
    nyquist_trajectory,
    stability_frontier,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSTABLE = 2
EXIT_MARGINAL = 3
EXIT_DIVERGED = 4

OUT_DIR_ENV = "CSAS_OUT_DIR"
DEFAULT_OUT_DIR = "csas_out"
COMPARE_ORDER = ("csas", "heuristic", "pid")
RATIO_FIELDS = ("avg_jitter", "flapping_rate", "settling_time", "resource_efficiency",
                "total_energy")


class CliError(Exception):
    """Usage or configuration problem; reported as JSON with exit code 1."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line


# -- formatting --------------------------------------------------------------

def fmt(value: Any) -> str:
    """Render one CSV cell: 9 significant digits, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".9g")
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        x = float(value)
        return x if math.isfinite(x) else None
    return value


def json_text(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def table_text(header: Sequence[str], rows: list[Sequence[Any]], form: str,
               extra: Optional[dict] = None) -> str:
    if form == "csv":
        return csv_text(header, rows)
    doc = {"columns": list(header), "rows": [dict(zip(header, r)) for r in rows]}
    if extra:
        doc.update(extra)
    return json_text(doc)


# -- output handling ---------------------------------------------------------

def resolve_out_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def write_outputs(out_dir: Path, files: dict[str, str], force: bool) -> list[Path]:
    """Write every file or none: existing targets abort unless ``force``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = {name: out_dir / name for name in files}
    clashes = sorted(str(p) for p in targets.values() if p.exists())
    if clashes and not force:
        raise CliError(f"refusing to overwrite {', '.join(clashes)}; pass --force", "out_dir")
    for name, text in files.items():
        with open(targets[name], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return list(targets.values())


def _report_error(exc: Exception) -> int:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    for attr in ("field", "line"):
        value = getattr(exc, attr, None)
        if value not in (None, ""):
            payload["error"][attr] = value
    sys.stderr.write(json_text(payload))
    return EXIT_CONFIG


# -- argument helpers --------------------------------------------------------

def _parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise CliError(f"expected key=value, got {text!r}", "set")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _overrides(args) -> dict:
    out = dict(_parse_override(s) for s in (args.set or []))
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _load(args) -> ScenarioConfig:
    if not args.scenario:
        raise CliError("--scenario is required", "scenario")
    return load_scenario(args.scenario, _overrides(args))


def _plant_from_args(args) -> tuple[DelayPlant, float]:
    """Plant from explicit flags, falling back to the scenario when given."""
    gain, T, tau = args.gain, args.time_constant, args.delay
    floor_deg = args.margin_floor
    if args.scenario:
        cfg = _load(args)
        ana = cfg.analysis
        gain = gain if gain is not None else (ana.gain or cfg.controller.csas.nominal_gain)
        T = T if T is not None else cfg.effective_time_constant
        tau = tau if tau is not None else (ana.delay if ana.delay is not None else cfg.latency.mean)
        if floor_deg is None:
            floor_deg = math.degrees(ana.margin_floor)
    missing = [name for name, v in (("--gain", gain), ("--time-constant", T), ("--delay", tau))
               if v is None]
    if missing:
        raise CliError(f"missing {', '.join(missing)} (or pass --scenario)", missing[0].lstrip("-"))
    floor = math.radians(floor_deg or 0.0)
    if not 0 <= floor < math.pi:
        raise CliError("--margin-floor must lie in [0, 180) degrees", "margin_floor")
    try:
        plant = DelayPlant(gain, T, tau, has_integrator=args.integrator)
    except ValueError as exc:
        raise CliError(str(exc), "plant") from None
    return plant, floor


def _plant_dict(plant: DelayPlant) -> dict:
    return {"gain": plant.gain, "time_constant": plant.time_constant, "delay": plant.delay,
            "has_integrator": plant.has_integrator}


def _emit(args, files: dict[str, str], stdout_text: Optional[str] = None) -> None:
    if args.out_dir is None and os.environ.get(OUT_DIR_ENV) is None and stdout_text is not None:
        sys.stdout.write(stdout_text)
        return
    for path in write_outputs(resolve_out_dir(args.out_dir), files, args.force):
        sys.stderr.write(f"wrote {path}\n")


# -- subcommands -------------------------------------------------------------

def cmd_analyze(args) -> int:
    plant, floor = _plant_from_args(args)
    doc = {"plant": _plant_dict(plant), "margin_floor_deg": math.degrees(floor)}
    try:
        report = analyze(plant, floor)
    except MarginalStabilityError as exc:
        doc.update(status="marginal", distance_to_critical=exc.distance, message=str(exc))
        code = EXIT_MARGINAL
    else:
        doc.update(report.as_dict())
        doc["status"] = "stable" if report.is_stable else "unstable"
        code = EXIT_OK if report.is_stable else EXIT_UNSTABLE
    if args.format == "csv":
        keys = sorted(k for k in doc if k != "plant")
        header = ["gain", "time_constant", "delay", "has_integrator"] + keys
        text = csv_text(header, [[*_plant_dict(plant).values(), *(doc[k] for k in keys)]])
        name = "analyze.csv"
    else:
        text, name = json_text(doc), "analyze.json"
    _emit(args, {name: text}, text)
    return code


NYQUIST_HEADER = ("omega", "re", "im", "abs_1_plus_L")


def cmd_nyquist(args) -> int:
    plant, _ = _plant_from_args(args)
    try:
        traj = nyquist_trajectory(plant, args.omega_min, args.omega_max,
                                  initial_samples=args.samples, strict=False)
    except ValueError as exc:
        raise CliError(str(exc), "omega") from None
    rows = [[w, p.real, p.imag, d] for w, p, d in
            zip(traj.frequencies, traj.points, traj.distances)]
    warning = None
    if traj.marginal:
        warning = f"WARNING: trajectory passes within {traj.min_distance:.3e} of -1"
    if args.format == "csv":
        text = csv_text(NYQUIST_HEADER, rows)
        if warning:
            text += f"# {warning}\n"
        name = "nyquist.csv"
    else:
        extra = {"plant": _plant_dict(plant), "marginal": traj.marginal,
                 "min_distance": traj.min_distance}
        if warning:
            extra["warning"] = warning
        text, name = table_text(NYQUIST_HEADER, rows, "json", extra), "nyquist.json"
    _emit(args, {name: text}, text)
    return EXIT_MARGINAL if traj.marginal else EXIT_OK


FRONTIER_HEADER = ("gain", "tau_max", "error")


def _gain_list(args, cfg: Optional[ScenarioConfig]) -> list[float]:
    if args.gains:
        try:
            return [float(g) for g in args.gains.split(",") if g.strip()]
        except ValueError:
            raise CliError(f"could not parse --gains {args.gains!r}", "gains") from None
    if cfg is not None and cfg.analysis.gains:
        return list(cfg.analysis.gains)
    if args.gain_count < 2 or not 1 < args.gain_min < args.gain_max:
        raise CliError("need 1 < --gain-min < --gain-max and --gain-count >= 2", "gains")
    return [float(g) for g in np.linspace(args.gain_min, args.gain_max, args.gain_count)]


def cmd_frontier(args) -> int:
    cfg = _load(args) if args.scenario else None
    T = args.time_constant
    if T is None and cfg is not None:
        T = cfg.effective_time_constant
    if T is None or not T > 0:
        raise CliError("--time-constant must be positive (or pass --scenario)", "time_constant")
    floor_deg = args.margin_floor
    if floor_deg is None:
        floor_deg = math.degrees(cfg.analysis.margin_floor) if cfg is not None else 0.0
    if not 0 <= floor_deg < 180:
        raise CliError("--margin-floor must lie in [0, 180) degrees", "margin_floor")
    gains = sorted(set(_gain_list(args, cfg)))
    points = stability_frontier(T, gains, math.radians(floor_deg))
    rows = [[p.gain, p.max_latency, p.reason] for p in points]
    name = f"frontier.{args.format}"
    text = table_text(FRONTIER_HEADER, rows, args.format,
                      {"time_constant": T, "margin_floor_deg": floor_deg})
    _emit(args, {name: text}, text)
    return EXIT_OK


TRACE_HEADER = ("time", "arrival_rate", "demand", "capacity", "control_signal",
                "applied_signal", "latency_sample", "response_latency",
                "measured_utilization", "noise_estimate", "action", "delta")


def _trace_rows(trace) -> list[list]:
    return [
        [trace.times[k], trace.arrival_rate[k], trace.demand[k], trace.capacity[k],
         trace.control_signal[k], trace.applied_signal[k], trace.latency_samples[k],
         trace.response_latency[k], trace.measured_utilization[k], trace.noise_estimate[k],
         trace.decisions[k].action.value, trace.decisions[k].delta]
        for k in range(len(trace))
    ]


def _run(cfg: ScenarioConfig):
    trace = run_scenario(cfg)
    m = cfg.metrics
    report = compute_metrics(trace, flapping_window=m.flapping_window, band=m.settling_band,
                             p_run=m.p_run, e_transition=m.e_transition)
    return trace, report


def cmd_simulate(args) -> int:
    cfg = _load(args)
    trace, report = _run(cfg)
    kind = cfg.controller.kind
    metrics_doc = {"scenario": cfg.name, "seed": cfg.seed, "controller": kind,
                   "metrics": report.as_dict(), "version": __version__}
    rows = _trace_rows(trace)
    stem = f"{cfg.name}_{kind}"
    files = {f"{stem}_trace.{args.format}": table_text(TRACE_HEADER, rows, args.format),
             f"{stem}_metrics.json": json_text(metrics_doc)}
    for path in write_outputs(resolve_out_dir(args.out_dir), files, args.force):
        sys.stderr.write(f"wrote {path}\n")
    sys.stdout.write(json_text(metrics_doc))
    return EXIT_DIVERGED if trace.diverged else EXIT_OK


def _ratio(value, base):
    if value is None or base is None or base == 0:
        return None
    return value / base


def compare_rows(cfg: ScenarioConfig) -> list[dict]:
    """Metrics for every scaling controller on one scenario, sorted by name."""
    results = {kind: _run(cfg.with_controller(kind))[1].as_dict() for kind in COMPARE_ORDER}
    base = results["heuristic"]
    rows = []
    for kind in sorted(results):
        row = {"controller": kind, **results[kind]}
        for key in RATIO_FIELDS:
            row[f"{key}_ratio"] = _ratio(results[kind][key], base[key])
        rows.append(row)
    return rows


def cmd_compare(args) -> int:
    cfg = _load(args)
    rows = compare_rows(cfg)
    header = list(rows[0])
    doc = {"scenario": cfg.name, "seed": cfg.seed, "baseline": "heuristic",
           "rows": rows, "version": __version__}
    files = {f"{cfg.name}_compare.csv": csv_text(header, [[r[h] for h in header] for r in rows]),
             f"{cfg.name}_compare.json": json_text(doc)}
    for path in write_outputs(resolve_out_dir(args.out_dir), files, args.force):
        sys.stderr.write(f"wrote {path}\n")
    sys.stdout.write(files[f"{cfg.name}_compare.csv"])
    return EXIT_DIVERGED if any(r["diverged"] for r in rows) else EXIT_OK


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csas", description="Stability analysis and simulation of "
                                                "delayed autoscaling loops.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, fmt_default):
        p.add_argument("--scenario", help="scenario JSON file or bundled scenario name")
        p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} "
                                         f"or ./{DEFAULT_OUT_DIR})")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--format", choices=("csv", "json"), default=fmt_default)
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scenario field by dotted path (repeatable)")

    def plant_flags(p):
        p.add_argument("--gain", type=float)
        p.add_argument("--time-constant", type=float)
        p.add_argument("--delay", type=float)
        p.add_argument("--integrator", action="store_true", help="add a pure integrator")
        p.add_argument("--margin-floor", type=float, help="phase margin floor in degrees")

    p = sub.add_parser("analyze", help="margins, winding number and stability radius")
    common(p, "json")
    plant_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("nyquist", help="sampled Nyquist trajectory")
    common(p, "csv")
    plant_flags(p)
    p.add_argument("--omega-min", type=float)
    p.add_argument("--omega-max", type=float)
    p.add_argument("--samples", type=int, default=256, help="initial log-grid size")
    p.set_defaults(func=cmd_nyquist)

    p = sub.add_parser("frontier", help="maximum tolerable latency per gain")
    common(p, "csv")
    p.add_argument("--time-constant", type=float)
    p.add_argument("--margin-floor", type=float, help="phase margin floor in degrees")
    p.add_argument("--gains", help="comma-separated gains, each above 1")
    p.add_argument("--gain-min", type=float, default=1.5)
    p.add_argument("--gain-max", type=float, default=10.0)
    p.add_argument("--gain-count", type=int, default=18)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("simulate", help="run one scenario, write trace and metrics")
    common(p, "csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run heuristic, PID and C-SAS on one scenario")
    common(p, "csv")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("a subcommand is required: analyze, nyquist, frontier, "
                           "simulate or compare")
        return args.func(args)
    except (CliError, ScenarioError, StabilityError, OSError) as exc:
        return _report_error(exc)


if __name__ == "__main__":
    sys.exit(main())
