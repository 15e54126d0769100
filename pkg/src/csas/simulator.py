"""Fixed-step simulation of a delayed autoscaling loop.

One aggregate plant stands in for the node pool:

    T dy/dt + y = K u(t - tau)

integrated exactly over each tick with the input held constant. Arrivals
are Poisson per tick, round-trip latency is Gamma distributed, and the
commanded replica count travels through a delay line before the plant sees
it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controllers import (
    Action,
    ControllerInput,
    CsasController,
    HeuristicController,
    PidController,
    ScalingDecision,
    estimate_noise,
)
from .scenario import ScenarioConfig, derive_streams

__all__ = [
    "OVERFLOW_LIMIT",
    "RHO_CAP",
    "SimulationTrace",
    "sample_gamma",
    "sample_poisson_arrivals",
    "response_latency_model",
    "delay_ticks",
    "make_controller",
    "run_scenario",
    "classify_response",
]

OVERFLOW_LIMIT = 1e6
RHO_CAP = 0.99
_HOLD = ScalingDecision(Action.HOLD)


def sample_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    """One Gamma(shape, scale) draw.

    Uses numpy's ``Generator.standard_gamma`` (Marsaglia-Tsang squeeze on a
    PCG64 stream), so a seeded generator always yields the same sequence.
    """
    if shape <= 0 or scale <= 0:
        raise ValueError("shape and scale must be positive")
    return float(rng.standard_gamma(shape)) * scale


def sample_poisson_arrivals(rng: np.random.Generator, rate: float, dt: float) -> int:
    """Number of arrivals in ``dt`` seconds at ``rate`` per second."""
    lam = rate * dt
    if not math.isfinite(lam) or lam < 0:
        raise ValueError(f"rate*dt must be finite and non-negative, got {lam!r}")
    if lam == 0:
        return 0
    return int(rng.poisson(lam))


def response_latency_model(demand: float, capacity: float, base_service: float,
                           net_latency: float) -> float:
    """Network latency plus an M/M/1-style service term saturating at ``RHO_CAP``."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    rho = min(demand / capacity, RHO_CAP)
    return net_latency + base_service / (1.0 - rho)


def delay_ticks(tau: float, tick: float) -> int:
    """Whole ticks covering ``tau``; exact multiples are not rounded up."""
    return max(0, math.ceil(tau / tick - 1e-9))


@dataclass
class SimulationTrace:
    """Per-tick record of one run.

    ``demand`` and ``capacity`` share VM-equivalent units; ``arrival_rate``
    keeps the raw tasks/s.
    """

    times: np.ndarray
    arrival_rate: np.ndarray
    demand: np.ndarray
    capacity: np.ndarray
    control_signal: np.ndarray
    applied_signal: np.ndarray
    latency_samples: np.ndarray
    response_latency: np.ndarray
    measured_utilization: np.ndarray
    noise_estimate: np.ndarray
    decisions: list = field(default_factory=list)
    tick: float = 1.0
    controller: str = ""
    diverged: bool = False
    step_time: Optional[float] = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([d.delta for d in self.decisions], dtype=int)

    @classmethod
    def from_series(cls, times, demand, capacity, response_latency=None, decisions=None,
                    tick=None, **kwargs) -> "SimulationTrace":
        """Build a trace from a few series; the rest are zero-filled."""
        times = np.asarray(times, dtype=float)
        n = times.size
        zeros = np.zeros(n)
        if tick is None:
            tick = float(times[1] - times[0]) if n > 1 else 1.0
        return cls(
            times=times,
            arrival_rate=np.asarray(demand, dtype=float),
            demand=np.asarray(demand, dtype=float),
            capacity=np.asarray(capacity, dtype=float),
            control_signal=zeros.copy(),
            applied_signal=zeros.copy(),
            latency_samples=zeros.copy(),
            response_latency=zeros.copy() if response_latency is None
            else np.asarray(response_latency, dtype=float),
            measured_utilization=zeros.copy(),
            noise_estimate=zeros.copy(),
            decisions=list(decisions) if decisions is not None else [_HOLD] * n,
            tick=tick,
            **kwargs,
        )


class ProportionalLoop:
    """Ungated unity-feedback loop ``u = r - y`` used for linear analysis.

    Its output is a continuous control level rather than a scaling decision,
    and the capacity floor is not applied, so the state may swing negative
    exactly as the linear model does.
    """

    name = "proportional"
    noise_window = 2
    noise_scale = 1.0


def make_controller(config: ScenarioConfig):
    spec = config.controller
    if spec.kind == "heuristic":
        return HeuristicController(spec.heuristic)
    if spec.kind == "pid":
        return PidController(spec.pid)
    if spec.kind == "csas":
        return CsasController(spec.csas)
    if spec.kind == "proportional":
        return ProportionalLoop()
    raise ValueError(f"unknown controller kind {spec.kind!r}")


def _default_step_time(config: ScenarioConfig) -> Optional[float]:
    if config.step_time is not None:
        return config.step_time
    segs = config.workload.segments
    return segs[1][0] if len(segs) > 1 else None


def run_scenario(config: ScenarioConfig, run_index: int = 0) -> SimulationTrace:
    """Simulate one scenario; identical config and run index give identical traces."""
    workload_seed, latency_seed, _ = derive_streams(config.seed, run_index)
    rng_work = np.random.default_rng(workload_seed)
    rng_lat = np.random.default_rng(latency_seed)

    controller = make_controller(config)
    linear = isinstance(controller, ProportionalLoop)
    n = config.ticks
    dt = config.tick
    T = config.effective_time_constant
    decay = math.exp(-dt / T)
    K = config.plant_gain
    svc = config.service_rate
    window_ticks = max(1, int(round(config.telemetry_window / dt)))
    every = config.control_every
    lat = config.latency

    times = np.arange(n) * dt
    arrivals = np.zeros(n)
    demand = np.zeros(n)
    capacity = np.zeros(n)
    control = np.zeros(n)
    applied = np.zeros(n)
    latency = np.zeros(n)
    response = np.zeros(n)
    measured = np.zeros(n)
    noise = np.zeros(n)
    decisions: list[ScalingDecision] = []

    y = float(config.initial_capacity)
    commanded = 0.0 if linear else float(round(config.initial_capacity))
    initial_signal = commanded
    history: list[float] = []
    arrival_sum = 0.0
    last_measured = 0.0
    last_noise = 0.0
    diverged = False
    k = 0

    for k in range(n):
        t = times[k]
        rate = config.workload.rate_at(t)
        if config.workload.stochastic:
            arrivals[k] = sample_poisson_arrivals(rng_work, rate, dt)
        else:
            arrivals[k] = rate * dt
        demand[k] = arrivals[k] / dt / svc
        arrival_sum += arrivals[k]
        if k >= window_ticks:
            arrival_sum -= arrivals[k - window_ticks]
        tau = sample_gamma(rng_lat, lat.gamma_shape, lat.scale) if lat.jitter else lat.mean
        latency[k] = tau
        capacity[k] = y

        decision = _HOLD
        if linear:
            commanded = demand[k] - y
        elif k % every == 0:
            offered = arrival_sum / (min(k + 1, window_ticks) * dt) / svc
            if offered == 0:
                util = 0.0
            elif y > 0:
                util = offered / y
            else:
                util = 1e6
            history.append(util)
            if len(history) > controller.noise_window:
                history.pop(0)
            last_measured = util
            last_noise = (estimate_noise(history, controller.noise_scale)
                          if len(history) >= 2 else 0.0)
            inp = ControllerInput(tick_time=float(t), measured_utilization=util,
                                  measured_latency=tau, arrival_rate=arrivals[k] / dt,
                                  noise_estimate=last_noise)
            decision = _saturate(controller.step(inp), commanded, config)
            commanded += decision.delta
        decisions.append(decision)
        measured[k] = last_measured
        noise[k] = last_noise
        control[k] = commanded

        src = k - delay_ticks(tau, dt)
        applied[k] = control[src] if src >= 0 else initial_signal

        if y > 0:
            response[k] = response_latency_model(demand[k], y, config.base_service, tau)
        else:
            response[k] = tau + config.base_service / (
                1.0 if demand[k] == 0 else 1.0 - RHO_CAP)

        y = y * decay + (1.0 - decay) * K * applied[k]
        if not math.isfinite(y) or abs(y) > OVERFLOW_LIMIT:
            diverged = True
            break

    m = k + 1
    return SimulationTrace(
        times=times[:m], arrival_rate=arrivals[:m] / dt, demand=demand[:m],
        capacity=capacity[:m], control_signal=control[:m], applied_signal=applied[:m],
        latency_samples=latency[:m], response_latency=response[:m],
        measured_utilization=measured[:m], noise_estimate=noise[:m], decisions=decisions,
        tick=dt, controller=controller.name, diverged=diverged,
        step_time=_default_step_time(config),
    )


def _saturate(decision: ScalingDecision, commanded: float, config: ScenarioConfig) -> ScalingDecision:
    # scale_down never goes below the replica floor, scale_up never past the pool
    target = commanded + decision.delta
    if decision.delta < 0:
        target = max(target, min(commanded, config.min_replicas))
    elif decision.delta > 0:
        target = min(target, max(commanded, config.node_count))
    applied = int(round(target - commanded))
    if applied == decision.delta:
        return decision
    action = decision.action if applied != 0 else Action.HOLD
    return ScalingDecision(action, abs(applied), decision.effective_gain, decision.phase_margin,
                           decision.beta, decision.rouche_ok, decision.stability_radius,
                           decision.raw_output)


def classify_response(series, tail_fraction: float = 0.3, tolerance: float = 0.01,
                      segments: int = 4) -> str:
    """Label a step response ``converged``, ``diverging`` or ``indeterminate``.

    Converged: peak-to-peak over the tail is below ``tolerance`` times the
    tail mean. Diverging: peak-to-peak grows strictly across ``segments``
    equal slices of the tail.
    """
    y = np.asarray(series, dtype=float)
    tail = y[int(len(y) * (1 - tail_fraction)):]
    if tail.size < segments or not np.all(np.isfinite(tail)):
        return "diverging"
    mean = abs(float(tail.mean()))
    if np.ptp(tail) < tolerance * mean:
        return "converged"
    spans = [np.ptp(part) for part in np.array_split(tail, segments)]
    if all(b > a for a, b in zip(spans, spans[1:])):
        return "diverging"
    return "indeterminate"
