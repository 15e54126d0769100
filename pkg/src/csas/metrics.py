"""Performance metrics over a :class:`~csas.simulator.SimulationTrace`.

Definitions (all deterministic, all invariant under a shift of the time
axis):

* jitter: mean absolute tick-to-tick change of modeled response latency,
  after a warm-up of the first 5% of ticks, in milliseconds;
* flapping rate: share of scaling actions whose next action goes the other
  way within a window of simulated seconds;
* settling time: seconds after the demand step until capacity stays inside
  a relative band around its final-window mean;
* resource efficiency: served work over provisioned work after warm-up;
* energy: running cost of provisioned capacity plus a fixed cost per VM
  transition.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .simulator import SimulationTrace

WARMUP_FRACTION = 0.05
FINAL_WINDOW_FRACTION = 0.10


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    avg_jitter: float
    flapping_rate: float
    settling_time: Optional[float]
    resource_efficiency: float
    total_energy: float
    scaling_action_count: int
    zero_demand: bool = False
    diverged: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _warmup_start(n: int) -> int:
    return int(n * WARMUP_FRACTION)


def avg_jitter(trace: SimulationTrace) -> float:
    """Mean |latency[k] - latency[k-1]| in ms, past the warm-up window."""
    lat = np.asarray(trace.response_latency, dtype=float)
    if lat.size < 2:
        raise MetricsError("jitter needs at least two ticks")
    tail = lat[min(_warmup_start(lat.size), lat.size - 2):]
    return float(np.mean(np.abs(np.diff(tail))) * 1e3)


def flapping_rate(trace: SimulationTrace, window: float = 60.0) -> float:
    """Percent of scaling actions whose next action reverses them within ``window`` seconds.

    Only the immediately following scaling action is considered, so a long
    monotone ramp counts one reversal at most, at its end.
    """
    if window <= 0:
        raise MetricsError("window must be positive")
    deltas = trace.deltas
    idx = np.nonzero(deltas)[0]
    if idx.size == 0:
        return 0.0
    times = np.asarray(trace.times)[idx]
    signs = np.sign(deltas[idx])
    flips = (signs[1:] == -signs[:-1]) & (np.diff(times) <= window)
    return 100.0 * int(flips.sum()) / idx.size


def settling_time(trace: SimulationTrace, step_time: Optional[float] = None,
                  band: float = 0.05) -> Optional[float]:
    """Elapsed seconds from ``step_time`` until capacity stays in band.

    The reference level is the mean over the last 10% of the trace; returns
    ``None`` for a diverged trace or when that final window is itself out of
    band.
    """
    if not 0 < band < 0.5:
        raise MetricsError("band must lie in (0, 0.5)")
    if trace.diverged:
        return None  # a truncated trace may end before the step
    if step_time is None:
        step_time = trace.step_time
    times = np.asarray(trace.times, dtype=float)
    if step_time is None or not times[0] <= step_time <= times[-1]:
        raise MetricsError(f"step_time {step_time!r} lies outside the trace")
    cap = np.asarray(trace.capacity, dtype=float)
    final = cap[int(cap.size * (1 - FINAL_WINDOW_FRACTION)):]
    level = float(final.mean())
    tol = band * abs(level)
    outside = np.abs(cap - level) > tol
    if outside[-final.size:].any():
        return None
    after = np.nonzero(times >= step_time)[0]
    bad = np.nonzero(outside[after])[0]
    if bad.size == 0:
        return 0.0
    first_good = after[bad[-1] + 1]
    return float(times[first_good] - step_time)


def resource_efficiency(trace: SimulationTrace) -> float:
    """100 * sum(min(demand, capacity)) / sum(capacity) after warm-up.

    A run that provisions nothing is reported as 100%.
    """
    start = _warmup_start(len(trace))
    cap = np.asarray(trace.capacity, dtype=float)[start:]
    dem = np.asarray(trace.demand, dtype=float)[start:]
    if cap.size == 0:
        raise MetricsError("empty trace")
    provisioned = float(cap.sum())
    if provisioned <= 0:
        return 100.0
    served = float(np.minimum(dem, cap).sum())
    return 100.0 * served / provisioned


def total_energy(trace: SimulationTrace, p_run: float = 1.0, e_transition: float = 30.0) -> float:
    """Running energy of provisioned capacity plus a cost per VM moved."""
    if p_run <= 0 or e_transition < 0:
        raise MetricsError("need p_run > 0 and e_transition >= 0")
    running = p_run * float(np.sum(trace.capacity)) * trace.tick
    transitions = e_transition * float(np.abs(trace.deltas).sum())
    return running + transitions


def compute_metrics(trace: SimulationTrace, step_time: Optional[float] = None,
                    flapping_window: float = 60.0, band: float = 0.05,
                    p_run: float = 1.0, e_transition: float = 30.0) -> MetricsReport:
    if step_time is None:
        step_time = trace.step_time
    settle = None
    if step_time is not None:
        settle = settling_time(trace, step_time, band)
    return MetricsReport(
        avg_jitter=avg_jitter(trace),
        flapping_rate=flapping_rate(trace, flapping_window),
        settling_time=settle,
        resource_efficiency=resource_efficiency(trace),
        total_energy=total_energy(trace, p_run, e_transition),
        scaling_action_count=int(np.count_nonzero(trace.deltas)),
        zero_demand=bool(np.sum(trace.demand) == 0),
        diverged=trace.diverged,
    )
