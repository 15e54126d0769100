"""Stability-aware autoscaling for cloud control loops with feedback delay.

Frequency-domain analysis of ``K exp(-tau s) / (T s + 1)`` loops, three
scaling controllers (threshold heuristic, PID, and a margin-scheduled
controller gated by the loop's stability radius), a seeded simulator and
comparison metrics.
"""

__version__ = "0.1.0"

from .stability import (  # noqa: E402
    DelayPlant,
    MarginalStabilityError,
    StabilityError,
    StabilityReport,
    analyze,
    crossover_frequency,
    max_tolerable_latency,
    min_distance_to_critical,
    nyquist_trajectory,
    phase_margin,
    rouche_check,
    stability_frontier,
    stability_radius,
    winding_number,
)

__all__ = [
    "__version__",
    "DelayPlant",
    "MarginalStabilityError",
    "StabilityError",
    "StabilityReport",
    "analyze",
    "crossover_frequency",
    "max_tolerable_latency",
    "min_distance_to_critical",
    "nyquist_trajectory",
    "phase_margin",
    "rouche_check",
    "stability_frontier",
    "stability_radius",
    "winding_number",
]
