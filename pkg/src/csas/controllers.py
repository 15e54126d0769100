"""Scaling controllers sharing one decision interface.

Each controller turns one :class:`ControllerInput` into a
:class:`ScalingDecision`. State lives in a small mutable object owned by a
single simulation run; the ``*_step`` functions are the reference logic and
the ``*Controller`` classes bundle config and state for the simulator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .stability import DelayPlant, min_distance_to_critical, phase_margin

__all__ = [
    "Action",
    "ControllerInput",
    "ScalingDecision",
    "quantize",
    "estimate_noise",
    "InsufficientWindowError",
    "HeuristicConfig",
    "HeuristicState",
    "heuristic_step",
    "PidConfig",
    "PidState",
    "pid_step",
    "CsasConfig",
    "CsasState",
    "csas_step",
    "HeuristicController",
    "PidController",
    "CsasController",
]


class Action(str, enum.Enum):
    SCALE_UP = "scale_up"
    SCALE_DOWN = "scale_down"
    HOLD = "hold"
    DAMPENED_HOLD = "dampened_hold"


@dataclass(frozen=True)
class ControllerInput:
    tick_time: float
    measured_utilization: float
    measured_latency: float
    arrival_rate: float = 0.0
    noise_estimate: float = 0.0

    def __post_init__(self):
        for name in ("tick_time", "measured_utilization", "measured_latency",
                     "arrival_rate", "noise_estimate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.measured_latency <= 0:
            raise ValueError("measured_latency must be positive")
        if self.measured_utilization < 0 or self.arrival_rate < 0 or self.noise_estimate < 0:
            raise ValueError("utilization, arrival rate and noise estimate must be non-negative")


@dataclass(frozen=True)
class ScalingDecision:
    action: Action
    magnitude: int = 0
    effective_gain: float = 0.0
    phase_margin: Optional[float] = None
    beta: Optional[float] = None
    rouche_ok: Optional[bool] = None
    stability_radius: Optional[float] = None
    raw_output: Optional[float] = None

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")
        if self.action in (Action.HOLD, Action.DAMPENED_HOLD) and self.magnitude != 0:
            raise ValueError("holds carry zero magnitude")

    @property
    def delta(self) -> int:
        """Signed change in commanded VM units."""
        if self.action is Action.SCALE_UP:
            return self.magnitude
        if self.action is Action.SCALE_DOWN:
            return -self.magnitude
        return 0

    @property
    def is_scaling(self) -> bool:
        return self.delta != 0


HOLD = ScalingDecision(Action.HOLD)


def quantize(raw: float) -> int:
    """Round half away from zero to whole VM units."""
    return int(math.copysign(math.floor(abs(raw) + 0.5), raw))


def _decision_from(units: int, **kwargs) -> ScalingDecision:
    if units > 0:
        return ScalingDecision(Action.SCALE_UP, units, **kwargs)
    if units < 0:
        return ScalingDecision(Action.SCALE_DOWN, -units, **kwargs)
    return ScalingDecision(Action.HOLD, 0, **kwargs)


class InsufficientWindowError(ValueError):
    pass


def estimate_noise(window: Sequence[float], scale: float = 1.0) -> float:
    """RMS deviation of the window from its mean, times ``scale``.

    Used as the sup-norm proxy for the telemetry perturbation.
    """
    if len(window) < 2:
        raise InsufficientWindowError("noise estimation needs at least two samples")
    x = np.asarray(window, dtype=float)
    return float(scale * np.sqrt(np.mean((x - x.mean()) ** 2)))


# -- heuristic ---------------------------------------------------------------

@dataclass(frozen=True)
class HeuristicConfig:
    upper: float = 0.70
    lower: float = 0.30
    cooldown: int = 5
    step_size: int = 1


@dataclass
class HeuristicState:
    cooldown_left: int = 0


def heuristic_step(inp: ControllerInput, state: HeuristicState,
                   config: HeuristicConfig = HeuristicConfig()) -> ScalingDecision:
    """Threshold rule with a cooldown counted in controller steps."""
    if state.cooldown_left > 0:
        state.cooldown_left -= 1
        return ScalingDecision(Action.HOLD, 0, effective_gain=1.0)
    u = inp.measured_utilization
    if u > config.upper:
        state.cooldown_left = config.cooldown
        return ScalingDecision(Action.SCALE_UP, config.step_size, effective_gain=1.0)
    if u < config.lower:
        state.cooldown_left = config.cooldown
        return ScalingDecision(Action.SCALE_DOWN, config.step_size, effective_gain=1.0)
    return ScalingDecision(Action.HOLD, 0, effective_gain=1.0)


# -- PID ---------------------------------------------------------------------

@dataclass(frozen=True)
class PidConfig:
    kp: float = 1.5
    ki: float = 0.4
    kd: float = 0.05
    integral_limit: float = 5.0
    target_utilization: float = 0.60
    sample_time: float = 1.0


@dataclass
class PidState:
    integral: float = 0.0
    previous_measurement: Optional[float] = None
    previous_time: Optional[float] = None


def pid_step(config: PidConfig, inp: ControllerInput, state: PidState) -> ScalingDecision:
    """Discrete PID on ``target - measured`` utilization.

    Positive output means spare capacity, so it releases VMs; negative output
    adds them. The integral accumulator is clamped and the derivative acts on
    the measurement to avoid setpoint kick.
    """
    measured = inp.measured_utilization
    error = config.target_utilization - measured
    dt = config.sample_time
    if state.previous_time is not None and inp.tick_time > state.previous_time:
        dt = inp.tick_time - state.previous_time

    limit = config.integral_limit
    state.integral = min(max(state.integral + error * dt, -limit), limit)
    derivative = 0.0
    if state.previous_measurement is not None:
        derivative = -(measured - state.previous_measurement) / dt
    state.previous_measurement = measured
    state.previous_time = inp.tick_time

    raw = config.kp * error + config.ki * state.integral + config.kd * derivative
    return _decision_from(-quantize(raw), effective_gain=config.kp, raw_output=raw)


# -- C-SAS -------------------------------------------------------------------

@dataclass(frozen=True)
class CsasConfig:
    nominal_gain: float = 3.0
    target_phase_margin: float = math.pi / 4
    provisioning_constant: float = 0.5
    latency_smoothing: float = 0.3
    noise_window: int = 10
    target_utilization: float = 0.60
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.nominal_gain <= 0:
            raise ValueError("nominal_gain must be positive")
        if not (0 < self.target_phase_margin < math.pi):
            raise ValueError("target_phase_margin must lie in (0, pi)")
        if self.provisioning_constant <= 0:
            raise ValueError("provisioning_constant must be positive")
        if not (0 < self.latency_smoothing <= 1):
            raise ValueError("latency_smoothing must lie in (0, 1]")
        if self.noise_window < 2:
            raise ValueError("noise_window must be at least 2")


@dataclass
class CsasState:
    smoothed_latency: Optional[float] = None


def csas_step(config: CsasConfig, inp: ControllerInput, state: CsasState) -> ScalingDecision:
    """One pass of the stability-aware scaling loop.

    The margin is evaluated at the nominal gain every step; when it falls
    short of the target the gain is scaled by ``margin / target``. A scaling
    action is only emitted when the noise estimate sits strictly inside the
    stability radius of the reduced loop.
    """
    a = config.latency_smoothing
    if state.smoothed_latency is None:
        state.smoothed_latency = inp.measured_latency
    else:
        state.smoothed_latency = a * inp.measured_latency + (1 - a) * state.smoothed_latency
    tau = state.smoothed_latency
    T = config.provisioning_constant
    K = config.nominal_gain

    margin = phase_margin(DelayPlant(K, T, tau))
    if margin <= 0:
        return ScalingDecision(Action.DAMPENED_HOLD, 0, effective_gain=0.0,
                               phase_margin=margin, beta=0.0, rouche_ok=False)
    if margin < config.target_phase_margin:
        beta = min(max(margin / config.target_phase_margin, 0.0), 1.0)
        k_safe = K * beta
    else:
        beta = 1.0
        k_safe = K

    radius = min_distance_to_critical(DelayPlant(k_safe, T, tau))[0]
    rouche_ok = inp.noise_estimate < radius
    info = dict(effective_gain=k_safe, phase_margin=margin, beta=beta,
                rouche_ok=rouche_ok, stability_radius=radius)
    if not rouche_ok:
        return ScalingDecision(Action.DAMPENED_HOLD, 0, **info)
    raw = k_safe * (inp.measured_utilization - config.target_utilization)
    return _decision_from(quantize(raw), raw_output=raw, **info)


# -- stateful wrappers used by the simulator ---------------------------------

@dataclass
class HeuristicController:
    config: HeuristicConfig = field(default_factory=HeuristicConfig)
    state: HeuristicState = field(default_factory=HeuristicState)
    name = "heuristic"
    noise_window = 10
    noise_scale = 1.0

    def step(self, inp: ControllerInput) -> ScalingDecision:
        return heuristic_step(inp, self.state, self.config)


@dataclass
class PidController:
    config: PidConfig = field(default_factory=PidConfig)
    state: PidState = field(default_factory=PidState)
    name = "pid"
    noise_window = 10
    noise_scale = 1.0

    def step(self, inp: ControllerInput) -> ScalingDecision:
        return pid_step(self.config, inp, self.state)


@dataclass
class CsasController:
    config: CsasConfig = field(default_factory=CsasConfig)
    state: CsasState = field(default_factory=CsasState)
    name = "csas"

    @property
    def noise_window(self) -> int:
        return self.config.noise_window

    @property
    def noise_scale(self) -> float:
        return self.config.noise_scale

    def step(self, inp: ControllerInput) -> ScalingDecision:
        return csas_step(self.config, inp, self.state)
