"""Scenario files: a versioned JSON document describing one experiment.

Unknown fields are rejected so that a typo never silently falls back to a
default. See ``docs/scenario_schema.md`` for the field reference.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .controllers import CsasConfig, HeuristicConfig, PidConfig

SCHEMA_VERSION = 1
CONTROLLER_KINDS = ("heuristic", "pid", "csas", "proportional")
BUNDLED = ("baseline_step", "bursty_high_latency", "frontier_sweep", "rouche_envelope")


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending key path."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        where = field or "<root>"
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(f"{where}: {message}")
        self.field = field
        self.line = line


def _check_keys(data: Any, allowed: set, path: str, required: tuple = ()):
    if not isinstance(data, Mapping):
        raise ScenarioError("expected an object", path)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ScenarioError(f"unknown field(s) {unknown}", path)
    for key in required:
        if key not in data:
            raise ScenarioError("missing required field", f"{path}.{key}".lstrip("."))


def _num(data, key, path, default=None, positive=False, nonneg=False, integer=False):
    full = f"{path}.{key}".lstrip(".")
    if key not in data:
        if default is None:
            raise ScenarioError("missing required field", full)
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {value!r}", full)
    if integer and int(value) != value:
        raise ScenarioError(f"expected an integer, got {value!r}", full)
    if not math.isfinite(value):
        raise ScenarioError("must be finite", full)
    if positive and value <= 0:
        raise ScenarioError(f"must be positive, got {value!r}", full)
    if nonneg and value < 0:
        raise ScenarioError(f"must be non-negative, got {value!r}", full)
    return int(value) if integer else float(value)


@dataclass(frozen=True)
class Burst:
    start: float
    duration: float
    multiplier: float


@dataclass(frozen=True)
class Workload:
    """Piecewise-constant Poisson rate with multiplicative burst windows."""

    segments: tuple[tuple[float, float], ...]
    bursts: tuple[Burst, ...] = ()
    stochastic: bool = True

    def rate_at(self, t: float) -> float:
        rate = 0.0
        for start, value in self.segments:
            if t >= start:
                rate = value
            else:
                break
        for b in self.bursts:
            if b.start <= t < b.start + b.duration:
                rate *= b.multiplier
        return rate


@dataclass(frozen=True)
class LatencyModel:
    mean: float
    gamma_shape: float = 2.0
    jitter: bool = True

    @property
    def scale(self) -> float:
        return self.mean / self.gamma_shape


@dataclass(frozen=True)
class MetricsSettings:
    flapping_window: float = 60.0
    settling_band: float = 0.05
    p_run: float = 1.0
    e_transition: float = 30.0


@dataclass(frozen=True)
class AnalysisSettings:
    """Plant parameters for the frequency-domain subcommands.

    ``gain`` defaults to the C-SAS nominal gain and ``delay`` to the mean
    latency when left unset; ``margin_floor`` is stored in radians.
    """

    gain: Optional[float] = None
    delay: Optional[float] = None
    gains: tuple[float, ...] = ()
    margin_floor: float = 0.0


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    pid: PidConfig = field(default_factory=PidConfig)
    csas: CsasConfig = field(default_factory=CsasConfig)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration: float
    latency: LatencyModel
    workload: Workload
    controller: ControllerSpec
    tick: float = 0.02
    node_count: int = 50
    provisioning_range: Optional[tuple[float, float]] = (0.2, 0.8)
    provisioning_constants_given: Optional[tuple[float, ...]] = None
    initial_capacity: float = 1.0
    min_replicas: int = 1
    plant_gain: float = 1.0
    telemetry_window: float = 1.0
    service_rate: float = 100.0
    base_service: float = 0.01
    control_interval: float = 1.0
    target_utilization: float = 0.60
    step_time: Optional[float] = None
    metrics: MetricsSettings = field(default_factory=MetricsSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.tick <= 0 or self.duration <= 0:
            raise ScenarioError("tick and duration must be positive", "tick")
        if self.duration < 100 * self.tick:
            raise ScenarioError("duration must cover at least 100 ticks", "duration")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ScenarioError("seed must be a 64-bit unsigned integer", "seed")
        t_min = min(self.provisioning_constants)
        if self.tick > t_min / 10 + 1e-15:
            raise ScenarioError(
                f"tick {self.tick} exceeds a tenth of the fastest provisioning constant {t_min}",
                "tick")
        if self.control_interval < self.tick:
            raise ScenarioError("control_interval must be at least one tick", "control_interval")

    @property
    def provisioning_constants(self) -> tuple[float, ...]:
        """Per-node time constants; drawn from the range with a seed-derived stream."""
        if self.provisioning_constants_given is not None:
            return self.provisioning_constants_given
        lo, hi = self.provisioning_range
        rng = np.random.default_rng(derive_streams(self.seed)[2])
        return tuple(float(x) for x in rng.uniform(lo, hi, self.node_count))

    @property
    def effective_time_constant(self) -> float:
        # nodes are equally sized, so the capacity-weighted mean is the plain mean
        return float(np.mean(self.provisioning_constants))

    @property
    def ticks(self) -> int:
        return int(round(self.duration / self.tick))

    @property
    def control_every(self) -> int:
        return max(1, int(round(self.control_interval / self.tick)))

    def with_controller(self, kind: str) -> "ScenarioConfig":
        return replace(self, controller=replace(self.controller, kind=kind))


def derive_streams(seed: int, run_index: int = 0) -> list[np.random.SeedSequence]:
    """Independent PRNG seeds for (workload, latency, nodes) of one run.

    Streams come from ``SeedSequence(seed, spawn_key=(run_index,)).spawn(3)``,
    so runs of a batch never share state and every controller compared on the
    same scenario sees the same workload and latency draws.
    """
    root = np.random.SeedSequence(entropy=seed, spawn_key=(run_index,))
    return root.spawn(3)


def _parse_controller(data, path, target_utilization, control_interval, time_constant):
    _check_keys(data, {"kind", "heuristic", "pid", "csas"}, path, ("kind",))
    kind = data["kind"]
    if kind not in CONTROLLER_KINDS:
        raise ScenarioError(f"kind must be one of {CONTROLLER_KINDS}, got {kind!r}", f"{path}.kind")

    h = data.get("heuristic", {})
    _check_keys(h, {"upper", "lower", "cooldown", "step_size"}, f"{path}.heuristic")
    hp = f"{path}.heuristic"
    heuristic = HeuristicConfig(
        upper=_num(h, "upper", hp, 0.70), lower=_num(h, "lower", hp, 0.30),
        cooldown=_num(h, "cooldown", hp, 5, nonneg=True, integer=True),
        step_size=_num(h, "step_size", hp, 1, positive=True, integer=True))
    if heuristic.lower >= heuristic.upper:
        raise ScenarioError("lower threshold must be below upper", hp)

    p = data.get("pid", {})
    pp = f"{path}.pid"
    _check_keys(p, {"kp", "ki", "kd", "integral_limit"}, pp)
    pid = PidConfig(
        kp=_num(p, "kp", pp, 1.5), ki=_num(p, "ki", pp, 0.4), kd=_num(p, "kd", pp, 0.05),
        integral_limit=_num(p, "integral_limit", pp, 5.0, positive=True),
        target_utilization=target_utilization, sample_time=control_interval)

    c = data.get("csas", {})
    cp = f"{path}.csas"
    _check_keys(c, {"nominal_gain", "target_phase_margin_deg", "provisioning_constant",
                    "latency_smoothing", "noise_window", "noise_scale"}, cp)
    try:
        csas = CsasConfig(
            nominal_gain=_num(c, "nominal_gain", cp, 3.0, positive=True),
            target_phase_margin=math.radians(_num(c, "target_phase_margin_deg", cp, 45.0)),
            provisioning_constant=_num(c, "provisioning_constant", cp, time_constant, positive=True),
            latency_smoothing=_num(c, "latency_smoothing", cp, 0.3),
            noise_window=_num(c, "noise_window", cp, 10, integer=True),
            target_utilization=target_utilization,
            noise_scale=_num(c, "noise_scale", cp, 1.0, nonneg=True))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), cp) from None
    return ControllerSpec(kind=kind, heuristic=heuristic, pid=pid, csas=csas)


_TOP_KEYS = {"version", "name", "seed", "tick", "duration", "node_count", "provisioning",
             "initial_capacity", "min_replicas", "plant_gain", "latency", "telemetry",
             "service", "control_interval", "target_utilization", "workload", "step_time",
             "controller", "metrics", "analysis", "description"}


def scenario_from_dict(data: Mapping) -> ScenarioConfig:
    """Validate a parsed scenario document and build the config."""
    _check_keys(data, _TOP_KEYS, "", ("version", "seed", "duration", "latency",
                                      "workload", "controller"))
    version = data["version"]
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported version {version!r} (expected {SCHEMA_VERSION})", "version")
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ScenarioError("seed must be a 64-bit unsigned integer", "seed")

    prov = data.get("provisioning", {"range": [0.2, 0.8]})
    _check_keys(prov, {"range", "constants"}, "provisioning")
    node_count = _num(data, "node_count", "", 50, positive=True, integer=True)
    prov_range, prov_constants = None, None
    if ("range" in prov) == ("constants" in prov):
        raise ScenarioError("give exactly one of range or constants", "provisioning")
    if "range" in prov:
        r = prov["range"]
        if (not isinstance(r, list) or len(r) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in r)
                or not 0 < r[0] <= r[1]):
            raise ScenarioError("expected [low, high] with 0 < low <= high", "provisioning.range")
        prov_range = (float(r[0]), float(r[1]))
    else:
        c = prov["constants"]
        if (not isinstance(c, list) or len(c) != node_count
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 for x in c)):
            raise ScenarioError("expected node_count positive numbers", "provisioning.constants")
        prov_constants = tuple(float(x) for x in c)

    lat = data["latency"]
    _check_keys(lat, {"mean", "gamma_shape", "jitter"}, "latency", ("mean",))
    jitter = lat.get("jitter", True)
    if not isinstance(jitter, bool):
        raise ScenarioError("expected true or false", "latency.jitter")
    latency = LatencyModel(mean=_num(lat, "mean", "latency", positive=True),
                           gamma_shape=_num(lat, "gamma_shape", "latency", 2.0, positive=True),
                           jitter=jitter)

    tel = data.get("telemetry", {})
    _check_keys(tel, {"window"}, "telemetry")
    svc = data.get("service", {})
    _check_keys(svc, {"rate_per_vm", "base_service"}, "service")

    wl = data["workload"]
    _check_keys(wl, {"segments", "bursts", "stochastic"}, "workload", ("segments",))
    segs = wl["segments"]
    if not isinstance(segs, list) or not segs:
        raise ScenarioError("expected a non-empty list of [start, rate]", "workload.segments")
    segments = []
    for i, seg in enumerate(segs):
        sp = f"workload.segments[{i}]"
        if (not isinstance(seg, list) or len(seg) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in seg)):
            raise ScenarioError("expected [start_time, rate]", sp)
        if seg[1] < 0 or seg[0] < 0:
            raise ScenarioError("start time and rate must be non-negative", sp)
        if segments and seg[0] <= segments[-1][0]:
            raise ScenarioError("segment start times must increase", sp)
        segments.append((float(seg[0]), float(seg[1])))
    bursts = []
    for i, b in enumerate(wl.get("bursts", [])):
        bp = f"workload.bursts[{i}]"
        _check_keys(b, {"start", "duration", "multiplier"}, bp, ("start", "duration", "multiplier"))
        bursts.append(Burst(_num(b, "start", bp, nonneg=True), _num(b, "duration", bp, positive=True),
                            _num(b, "multiplier", bp, nonneg=True)))
    stochastic = wl.get("stochastic", True)
    if not isinstance(stochastic, bool):
        raise ScenarioError("expected true or false", "workload.stochastic")
    workload = Workload(tuple(segments), tuple(bursts), stochastic)

    met = data.get("metrics", {})
    _check_keys(met, {"flapping_window", "settling_band", "p_run", "e_transition"}, "metrics")
    metrics = MetricsSettings(
        flapping_window=_num(met, "flapping_window", "metrics", 60.0, positive=True),
        settling_band=_num(met, "settling_band", "metrics", 0.05, positive=True),
        p_run=_num(met, "p_run", "metrics", 1.0, positive=True),
        e_transition=_num(met, "e_transition", "metrics", 30.0, nonneg=True))
    if not metrics.settling_band < 0.5:
        raise ScenarioError("must lie in (0, 0.5)", "metrics.settling_band")

    ana = data.get("analysis", {})
    _check_keys(ana, {"gain", "delay", "gains", "margin_floor_deg"}, "analysis")
    gains = ana.get("gains", [])
    if (not isinstance(gains, list)
            or not all(isinstance(g, (int, float)) and not isinstance(g, bool) and g > 1
                       for g in gains)):
        raise ScenarioError("expected a list of gains above 1", "analysis.gains")
    floor_deg = _num(ana, "margin_floor_deg", "analysis", 0.0, nonneg=True)
    if floor_deg >= 180:
        raise ScenarioError("must lie in [0, 180)", "analysis.margin_floor_deg")
    analysis = AnalysisSettings(
        gain=_num(ana, "gain", "analysis", positive=True) if "gain" in ana else None,
        delay=_num(ana, "delay", "analysis", nonneg=True) if "delay" in ana else None,
        gains=tuple(float(g) for g in gains),
        margin_floor=math.radians(floor_deg))

    tick = _num(data, "tick", "", 0.02, positive=True)
    control_interval = _num(data, "control_interval", "", 1.0, positive=True)
    target = _num(data, "target_utilization", "", 0.60, positive=True)
    if prov_constants is not None:
        t_eff = float(np.mean(prov_constants))
    else:
        rng = np.random.default_rng(derive_streams(seed)[2])
        t_eff = float(np.mean(rng.uniform(prov_range[0], prov_range[1], node_count)))

    name = data.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("expected a string", "name")
    step_time = data.get("step_time")
    if step_time is not None:
        step_time = _num(data, "step_time", "", nonneg=True)

    return ScenarioConfig(
        name=name,
        seed=seed,
        duration=_num(data, "duration", "", positive=True),
        latency=latency,
        workload=workload,
        controller=_parse_controller(data["controller"], "controller", target,
                                     control_interval, t_eff),
        tick=tick,
        node_count=node_count,
        provisioning_range=prov_range,
        provisioning_constants_given=prov_constants,
        initial_capacity=_num(data, "initial_capacity", "", 1.0, nonneg=True),
        min_replicas=_num(data, "min_replicas", "", 1, nonneg=True, integer=True),
        plant_gain=_num(data, "plant_gain", "", 1.0, positive=True),
        telemetry_window=_num(tel, "window", "telemetry", 1.0, positive=True),
        service_rate=_num(svc, "rate_per_vm", "service", 100.0, positive=True),
        base_service=_num(svc, "base_service", "service", 0.01, positive=True),
        control_interval=control_interval,
        target_utilization=target,
        step_time=step_time,
        metrics=metrics,
        analysis=analysis,
        version=version,
    )


def apply_overrides(data: dict, overrides: Mapping[str, Any]) -> dict:
    """Return a copy of ``data`` with dotted-path keys replaced."""
    out = copy.deepcopy(data)
    for dotted, value in overrides.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out


def parse_scenario_text(text: str, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, line=exc.lineno) from None
    if overrides:
        if not isinstance(data, dict):
            raise ScenarioError("expected an object")
        data = apply_overrides(data, overrides)
    return scenario_from_dict(data)


def bundled_scenario_text(name: str) -> str:
    if name not in BUNDLED:
        raise ScenarioError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    return resources.files("csas").joinpath("scenarios").joinpath(f"{name}.json").read_text(encoding="utf-8")


def load_scenario(path_or_name: str | Path,
                  overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by bare name."""
    path = Path(path_or_name)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    elif str(path_or_name) in BUNDLED:
        text = bundled_scenario_text(str(path_or_name))
    else:
        raise ScenarioError(f"scenario file not found: {path_or_name}")
    return parse_scenario_text(text, overrides)
