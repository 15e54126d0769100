"""Frequency-domain stability analysis of a first-order plant with dead time.

The open loop is

    L(s) = K exp(-tau s) / (T s + 1)              (default form)
    L(s) = K exp(-tau s) / (s (T s + 1))          (``has_integrator=True``)

with the distribution block fixed to unity. Everything here is a pure
function of its inputs; angles are radians throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "EPS_CRIT",
    "StabilityError",
    "MarginalStabilityError",
    "UnstablePlantError",
    "DelayPlant",
    "NyquistTrajectory",
    "StabilityReport",
    "FrontierPoint",
    "frequency_response",
    "crossover_frequency",
    "phase_margin",
    "default_frequency_range",
    "nyquist_trajectory",
    "winding_number",
    "analytic_stability_index",
    "contour_winding_number",
    "min_distance_to_critical",
    "stability_radius",
    "rouche_check",
    "max_tolerable_latency",
    "stability_frontier",
    "analyze",
]

# Distance to -1 below which the encirclement count is considered ill-conditioned.
EPS_CRIT = 1e-4

_RADIUS_GRID = 4096
_GOLDEN_TOL = 1e-8
_MAX_SAMPLES = 2_000_000
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class StabilityError(ValueError):
    """Base class for analysis errors."""


class MarginalStabilityError(StabilityError):
    """The Nyquist trajectory passes within ``EPS_CRIT`` of the critical point."""

    def __init__(self, message: str, distance: float):
        super().__init__(message)
        self.distance = distance


class UnstablePlantError(StabilityError):
    """Raised when an operation requires a stable closed loop."""


@dataclass(frozen=True)
class DelayPlant:
    """Open loop ``K exp(-tau s) / (T s + 1)``, optionally with an extra ``1/s``."""

    gain: float
    time_constant: float
    delay: float = 0.0
    has_integrator: bool = False

    def __post_init__(self):
        for name in ("gain", "time_constant", "delay"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.gain <= 0:
            raise ValueError(f"gain must be positive, got {self.gain!r}")
        if self.time_constant <= 0:
            raise ValueError(f"time_constant must be positive, got {self.time_constant!r}")
        if self.delay < 0:
            raise ValueError(f"delay must be non-negative, got {self.delay!r}")

    def transfer(self, s):
        """Evaluate L(s) at complex ``s`` (scalar or array), no domain checks."""
        s = np.asarray(s, dtype=complex)
        value = self.gain * np.exp(-self.delay * s) / (self.time_constant * s + 1.0)
        if self.has_integrator:
            value = value / s
        return value

    def response(self, omega):
        """Vectorized L(i omega)."""
        return self.transfer(1j * np.asarray(omega, dtype=float))


def frequency_response(plant: DelayPlant, omega: float) -> complex:
    """Return L(i omega) for a single real frequency."""
    if not math.isfinite(omega):
        raise ValueError(f"omega must be finite, got {omega!r}")
    if plant.has_integrator and omega <= 0:
        raise ValueError("omega must be positive for the integrator form (pole at the origin)")
    return complex(plant.response(omega))


def _integrator_crossover(plant: DelayPlant) -> float:
    # |L| = K / (w sqrt(1 + (T w)^2)) falls monotonically from +inf to 0.
    K, T = plant.gain, plant.time_constant

    def excess(w):
        return math.log(K) - math.log(w) - 0.5 * math.log1p((T * w) ** 2)

    lo, hi = 1e-12, 1.0
    while excess(hi) > 0:
        lo, hi = hi, hi * 10.0
    while excess(lo) < 0:
        lo /= 10.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return math.sqrt(lo * hi)


def crossover_frequency(plant: DelayPlant) -> Optional[float]:
    """Gain crossover frequency, or ``None`` when |L(i omega)| < 1 for all omega > 0."""
    if plant.has_integrator:
        return _integrator_crossover(plant)
    K, T = plant.gain, plant.time_constant
    if K <= 1.0:
        return None
    return math.sqrt(K * K - 1.0) / T


def phase_margin(plant: DelayPlant) -> float:
    """Phase margin in radians; pi when there is no gain crossover.

    May be negative, which signals an unstable closed loop for this plant
    family.
    """
    w_c = crossover_frequency(plant)
    if w_c is None:
        return math.pi
    margin = math.pi - math.atan(plant.time_constant * w_c) - w_c * plant.delay
    if plant.has_integrator:
        margin -= math.pi / 2
    return margin


def default_frequency_range(plant: DelayPlant) -> tuple[float, float]:
    """Sweep limits used when the caller gives none."""
    inv_tau = 1.0 / max(plant.delay, 1e-3)
    omega_max = 1e3 * max(1.0 / plant.time_constant, inv_tau)
    omega_min = 1e-4 * min(1.0 / plant.time_constant, inv_tau)
    if plant.has_integrator:
        omega_min = min(omega_min, 1e-4 * plant.gain)
    return omega_min, omega_max


@dataclass(frozen=True, eq=False)
class NyquistTrajectory:
    """Sampled image of the positive imaginary axis under L."""

    frequencies: np.ndarray
    points: np.ndarray
    accumulated_argument: float
    marginal: bool = False

    @property
    def distances(self) -> np.ndarray:
        """|1 + L(i omega)| at every sample."""
        return np.abs(1.0 + self.points)

    @property
    def min_distance(self) -> float:
        return float(self.distances.min())


def _wrapped_steps(values: np.ndarray) -> np.ndarray:
    # arg(z[k+1] / z[k]) lies in (-pi, pi]
    return np.angle(values[1:] / values[:-1])


def _needs_split(values: np.ndarray) -> np.ndarray:
    steps = np.abs(_wrapped_steps(values))
    mags = np.abs(values)
    chord = np.abs(np.diff(values))
    near = np.minimum(mags[1:], mags[:-1])
    # the chord test keeps the origin from slipping between two samples
    return (steps >= math.pi / 2) | (chord > 0.5 * near)


def _refine(param: np.ndarray, evaluate: Callable[[np.ndarray], np.ndarray],
            midpoint: Callable[[np.ndarray, np.ndarray], np.ndarray],
            eps_crit: float, strict: bool, max_samples: int):
    """Bisect a parametrized curve until every argument step is small.

    Returns ``(param, values, marginal)`` where ``values = evaluate(param)``.
    """
    values = evaluate(param)
    while True:
        dist = float(np.abs(values).min())
        if dist < eps_crit:
            if strict:
                raise MarginalStabilityError(
                    f"trajectory passes within {dist:.3e} of the critical point", dist)
            return param, values, True
        split = _needs_split(values)
        if not split.any():
            return param, values, False
        if param.size + int(split.sum()) > max_samples:
            if strict:
                raise MarginalStabilityError(
                    "refinement limit reached near the critical point", dist)
            return param, values, True
        idx = np.nonzero(split)[0]
        new_param = midpoint(param[idx], param[idx + 1])
        new_values = evaluate(new_param)
        order = np.argsort(np.concatenate([param, new_param]), kind="stable")
        param = np.concatenate([param, new_param])[order]
        values = np.concatenate([values, new_values])[order]


def nyquist_trajectory(plant: DelayPlant, omega_min: Optional[float] = None,
                       omega_max: Optional[float] = None, initial_samples: int = 256,
                       eps_crit: float = EPS_CRIT, strict: bool = True,
                       max_samples: int = _MAX_SAMPLES) -> NyquistTrajectory:
    """Adaptively sampled L(i omega) on a logarithmic grid.

    The grid is bisected until the argument of ``1 + L`` changes by less than
    pi/2 between neighbours. With ``strict`` (the default) a trajectory
    passing within ``eps_crit`` of -1 raises :class:`MarginalStabilityError`;
    otherwise it is returned with ``marginal=True``.
    """
    lo, hi = default_frequency_range(plant)
    omega_min = lo if omega_min is None else omega_min
    omega_max = hi if omega_max is None else omega_max
    if not (0 < omega_min < omega_max) or not math.isfinite(omega_max):
        raise ValueError(f"need 0 < omega_min < omega_max, got {omega_min!r}, {omega_max!r}")
    if initial_samples < 16:
        raise ValueError("initial_samples must be at least 16")

    grid = np.geomspace(omega_min, omega_max, initial_samples)
    freqs, values, marginal = _refine(
        grid, lambda w: 1.0 + plant.response(w), lambda a, b: np.sqrt(a * b),
        eps_crit, strict, max_samples)
    return NyquistTrajectory(
        frequencies=freqs,
        points=values - 1.0,
        accumulated_argument=float(_wrapped_steps(values).sum()),
        marginal=marginal,
    )


def _closure_gap(plant: DelayPlant) -> float:
    # Argument change of 1 + L across omega = 0. Without the integrator the
    # curve is continuous there; with it, the RHP indentation around the pole
    # swings 1 + L through a half turn clockwise.
    return -math.pi if plant.has_integrator else 0.0


def analytic_stability_index(plant: DelayPlant, **kwargs) -> float:
    """Total argument change of ``1 + L`` around the D-contour, in radians.

    The positive half-axis sweep is doubled by conjugate symmetry, the large
    arc contributes nothing (L vanishes there) and the crossing of the origin
    uses the asymptotic form. The result is ``-2 pi`` times the clockwise
    encirclement count up to truncation of the sweep.
    """
    traj = nyquist_trajectory(plant, **kwargs)
    return 2.0 * traj.accumulated_argument + _closure_gap(plant)


def winding_number(plant: DelayPlant, residue_limit: float = 0.05, **kwargs) -> int:
    """Clockwise encirclements of -1 by the full Nyquist plot of ``plant``.

    With no open-loop right-half-plane poles this is the number of unstable
    closed-loop roots.
    """
    raw = -analytic_stability_index(plant, **kwargs) / (2.0 * math.pi)
    count = round(raw)
    if abs(raw - count) >= residue_limit:
        raise StabilityError(
            f"contour closure residue {abs(raw - count):.3f} too large; widen the sweep")
    return int(count)


def contour_winding_number(func: Callable[[np.ndarray], np.ndarray], radius: float,
                           indent: float = 0.0, samples: int = 1024,
                           eps_crit: float = EPS_CRIT) -> int:
    """Clockwise encirclements of the origin by ``func`` along a D-contour.

    ``func`` maps complex ``s`` arrays to complex values. The contour runs up
    the imaginary axis from ``-i radius`` to ``i radius`` (skirting the origin
    through the right half plane when ``indent > 0``) and closes with the
    right half-plane arc. No symmetry is assumed, so ``func`` may have
    complex coefficients.
    """
    # piecewise parameter: axis pieces in log-frequency, arcs in angle
    pieces = []
    lo = indent if indent > 0 else radius * 1e-9

    def neg_axis(t):
        return -1j * np.exp(t)

    def pos_axis(t):
        return 1j * np.exp(t)

    def small_arc(t):
        return indent * np.exp(1j * t)

    def big_arc(t):
        return radius * np.exp(1j * t)

    log_lo, log_hi = math.log(lo), math.log(radius)
    pieces.append((neg_axis, np.linspace(log_hi, log_lo, samples)))
    if indent > 0:
        pieces.append((small_arc, np.linspace(-math.pi / 2, math.pi / 2, samples // 4)))
    else:
        pieces.append((lambda t: 1j * t, np.linspace(-lo, lo, 3)))
    pieces.append((pos_axis, np.linspace(log_lo, log_hi, samples)))
    pieces.append((big_arc, np.linspace(math.pi / 2, -math.pi / 2, samples)))

    total = 0.0
    previous_end = None
    for path, param in pieces:
        # _refine sorts its parameter; keep it increasing and map direction in path
        flip = param[0] > param[-1]
        t = -param if flip else param
        f = (lambda p=path, fl=flip: (lambda u: func(p(-u if fl else u))))()
        _, values, _ = _refine(t, f, lambda a, b: 0.5 * (a + b), eps_crit, True, _MAX_SAMPLES)
        if previous_end is not None:
            total += float(np.angle(values[0] / previous_end))
        total += float(_wrapped_steps(values).sum())
        previous_end = values[-1]
    return int(round(-total / (2.0 * math.pi)))


def _golden_min(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def min_distance_to_critical(plant: DelayPlant, omega_min: Optional[float] = None,
                             omega_max: Optional[float] = None) -> tuple[float, float]:
    """Return ``(min |1 + L(i omega)|, argmin omega)`` with no stability check."""
    return _min_distance_cached(plant, omega_min, omega_max)


@lru_cache(maxsize=4096)
def _min_distance_cached(plant, omega_min, omega_max):
    lo, hi = default_frequency_range(plant)
    omega_min = lo if omega_min is None else omega_min
    omega_max = hi if omega_max is None else omega_max
    grid = np.geomspace(omega_min, omega_max, _RADIUS_GRID)
    dist = np.abs(1.0 + plant.response(grid))
    i = int(np.argmin(dist))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]

    def objective(w):
        return float(abs(1.0 + plant.response(w)))

    w_star = _golden_min(objective, float(a), float(b), _GOLDEN_TOL)
    best = objective(w_star)
    if dist[i] < best:
        return float(dist[i]), float(grid[i])
    return best, w_star


def stability_radius(plant: DelayPlant, omega_min: Optional[float] = None,
                     omega_max: Optional[float] = None) -> float:
    """Smallest distance from the Nyquist trajectory to -1 for a stable plant.

    Any additive loop perturbation whose magnitude stays below this value on
    the contour leaves the closed loop stable.
    """
    if winding_number(plant) != 0:
        raise UnstablePlantError("stability radius is undefined for an unstable closed loop")
    return min_distance_to_critical(plant, omega_min, omega_max)[0]


def rouche_check(plant: DelayPlant, perturbation_bound: float) -> bool:
    """True when a perturbation of the given sup-norm provably cannot destabilize."""
    if perturbation_bound < 0:
        raise ValueError("perturbation_bound must be non-negative")
    return perturbation_bound < stability_radius(plant)


def max_tolerable_latency(gain: float, time_constant: float, margin_floor: float = 0.0,
                          has_integrator: bool = False) -> Optional[float]:
    """Largest delay keeping the phase margin at or above ``margin_floor``.

    Returns ``None`` when the loop never reaches unity gain (no latency
    bound exists).
    """
    if not (0.0 <= margin_floor < math.pi):
        raise ValueError(f"margin_floor must lie in [0, pi), got {margin_floor!r}")
    plant = DelayPlant(gain, time_constant, 0.0, has_integrator)
    w_c = crossover_frequency(plant)
    if w_c is None:
        return None
    numerator = phase_margin(plant) - margin_floor
    if numerator <= 0:
        raise ValueError(
            f"margin floor {margin_floor:.4f} rad is unreachable at any delay "
            f"(zero-delay margin {phase_margin(plant):.4f} rad)")
    return numerator / w_c


@dataclass(frozen=True)
class FrontierPoint:
    gain: float
    max_latency: Optional[float]
    reason: Optional[str] = None


def stability_frontier(time_constant: float, gains: Sequence[float],
                       margin_floor: float = 0.0) -> list[FrontierPoint]:
    """Maximum tolerable latency for each gain; failed points carry a reason."""
    points = []
    for gain in gains:
        if not gain > 1:
            points.append(FrontierPoint(gain, None, "gain must exceed 1"))
            continue
        try:
            points.append(FrontierPoint(gain, max_tolerable_latency(gain, time_constant, margin_floor)))
        except ValueError as exc:
            points.append(FrontierPoint(gain, None, str(exc)))
    return points


@dataclass(frozen=True)
class StabilityReport:
    crossover_frequency: Optional[float]
    phase_margin: float
    winding_number: int
    stability_radius: float
    max_tolerable_latency: Optional[float]
    is_stable: bool

    def as_dict(self) -> dict:
        return {
            "crossover_frequency": self.crossover_frequency,
            "phase_margin_rad": self.phase_margin,
            "phase_margin_deg": math.degrees(self.phase_margin),
            "winding_number": self.winding_number,
            "stability_radius": self.stability_radius,
            "max_tolerable_latency": self.max_tolerable_latency,
            "is_stable": self.is_stable,
        }


def analyze(plant: DelayPlant, margin_floor: float = 0.0) -> StabilityReport:
    """Full report for one plant; raises :class:`MarginalStabilityError` near -1."""
    wn = winding_number(plant)
    try:
        latency = max_tolerable_latency(plant.gain, plant.time_constant, margin_floor,
                                        plant.has_integrator)
    except ValueError:
        latency = None
    return StabilityReport(
        crossover_frequency=crossover_frequency(plant),
        phase_margin=phase_margin(plant),
        winding_number=wn,
        stability_radius=min_distance_to_critical(plant)[0],
        max_tolerable_latency=latency,
        is_stable=wn == 0,
    )
