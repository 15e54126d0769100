import math

import numpy as np
import pytest

from csas.scenario import scenario_from_dict
from csas.simulator import (
    OVERFLOW_LIMIT,
    classify_response,
    delay_ticks,
    response_latency_model,
    run_scenario,
    sample_gamma,
    sample_poisson_arrivals,
)
from csas.stability import DelayPlant, phase_margin, winding_number


def scenario(**over):
    base = {
        "version": 1, "seed": 5, "duration": 20.0, "tick": 0.01, "node_count": 1,
        "provisioning": {"constants": [0.5]}, "initial_capacity": 0,
        "latency": {"mean": 0.1, "jitter": False},
        "workload": {"segments": [[0, 0], [0.5, 100]], "stochastic": False},
        "controller": {"kind": "proportional"},
    }
    for key, value in over.items():
        base[key] = value
    return scenario_from_dict(base)


def loop(K, tau, duration=25.0, tick=0.001):
    return scenario(plant_gain=K, latency={"mean": tau, "jitter": False},
                    duration=duration, tick=tick)


# -- samplers -----------------------------------------------------------------

def test_gamma_exponential_case():
    rng = np.random.default_rng(1)
    draws = np.array([sample_gamma(rng, 1.0, 0.3) for _ in range(200_000)])
    assert draws.mean() == pytest.approx(0.3, rel=0.01)


def test_gamma_reproducible():
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    first = [sample_gamma(r1, 2.0, 0.05) for _ in range(10)]
    assert first == [sample_gamma(r2, 2.0, 0.05) for _ in range(10)]
    assert all(x > 0 for x in first)


@pytest.mark.parametrize("shape,scale", [(0, 1), (1, 0), (-1, 1)])
def test_gamma_rejects_bad_parameters(shape, scale):
    with pytest.raises(ValueError):
        sample_gamma(np.random.default_rng(0), shape, scale)


def test_poisson_zero_rate_and_reproducibility():
    rng = np.random.default_rng(3)
    assert all(sample_poisson_arrivals(rng, 0.0, 0.02) == 0 for _ in range(100))
    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    assert ([sample_poisson_arrivals(r1, 200, 0.02) for _ in range(50)]
            == [sample_poisson_arrivals(r2, 200, 0.02) for _ in range(50)])
    with pytest.raises(ValueError):
        sample_poisson_arrivals(rng, -1.0, 0.02)


# -- latency model and delay line ----------------------------------------------

def test_latency_model():
    assert response_latency_model(0, 4, 0.01, 0.05) == pytest.approx(0.06)
    assert response_latency_model(2, 4, 0.010, 0.050) == pytest.approx(0.070)
    assert response_latency_model(20, 4, 0.01, 0.05) == pytest.approx(0.05 + 0.01 / 0.01)
    with pytest.raises(ValueError):
        response_latency_model(1, 0, 0.01, 0.05)


def test_delay_ticks():
    assert delay_ticks(0.0, 0.02) == 0
    assert delay_ticks(0.1, 0.02) == 5  # exact multiple is not rounded up
    assert delay_ticks(0.101, 0.02) == 6
    assert delay_ticks(0.001, 0.02) == 1


def test_applied_signal_is_causal():
    cfg = scenario_from_dict({
        "version": 1, "seed": 77, "duration": 30.0, "tick": 0.02, "initial_capacity": 5,
        "latency": {"mean": 0.25}, "control_interval": 0.5,
        "workload": {"segments": [[0, 300.0], [10, 900.0]]},
        "controller": {"kind": "csas"}})
    tr = run_scenario(cfg)
    for k in range(len(tr)):
        d = delay_ticks(tr.latency_samples[k], tr.tick)
        assert d >= 1
        src = k - d
        expected = tr.control_signal[src] if src >= 0 else tr.control_signal[0]
        assert tr.applied_signal[k] == expected


# -- plant -----------------------------------------------------------------------

def test_constant_input_matches_closed_form():
    # utilization stays inside the heuristic band, so the command never moves
    cfg = scenario_from_dict({
        "version": 1, "seed": 2, "duration": 100.0, "tick": 0.01, "node_count": 1,
        "provisioning": {"constants": [0.5]}, "initial_capacity": 2.7, "plant_gain": 1.0,
        "latency": {"mean": 0.05, "jitter": False},
        "workload": {"segments": [[0, 135.0]], "stochastic": False},
        "controller": {"kind": "heuristic"}})
    tr = run_scenario(cfg)
    assert len(tr) == 10_000
    assert not np.any(tr.deltas)
    assert np.all(tr.applied_signal == 3.0)
    k = np.arange(len(tr))
    exact = 3.0 + (2.7 - 3.0) * np.exp(-k * 0.01 / 0.5)
    assert np.max(np.abs(tr.capacity - exact)) < 1e-12


def test_zero_workload_stays_at_origin():
    for kind in ("heuristic", "pid", "csas", "proportional"):
        cfg = scenario(workload={"segments": [[0, 0.0]]}, controller={"kind": kind},
                       duration=10.0)
        tr = run_scenario(cfg)
        assert np.all(tr.capacity == 0), kind
        assert np.all(tr.demand == 0)


def test_capacity_floor_under_scale_down():
    cfg = scenario_from_dict({
        "version": 1, "seed": 8, "duration": 60.0, "initial_capacity": 6, "min_replicas": 2,
        "latency": {"mean": 0.1}, "control_interval": 0.5,
        "workload": {"segments": [[0, 1.0]]},
        "controller": {"kind": "heuristic", "heuristic": {"cooldown": 0}}})
    tr = run_scenario(cfg)
    assert tr.control_signal.min() == 2
    assert tr.capacity.min() >= 2 - 1e-12


# -- closed-loop behaviour -------------------------------------------------------

def test_stable_loop_converges():
    tr = run_scenario(loop(2, 0.1))
    assert classify_response(tr.capacity) == "converged"
    tail = tr.capacity[int(0.7 * len(tr)):]
    assert np.ptp(tail) < 0.01 * abs(tail.mean())


def test_unstable_loop_grows():
    tr = run_scenario(loop(5, 0.25))
    assert tr.diverged or classify_response(tr.capacity) == "diverging"


def test_overflow_guard_truncates():
    tr = run_scenario(loop(20, 0.4, duration=200.0, tick=0.01))
    assert tr.diverged
    assert len(tr) < 20_000
    assert np.all(np.abs(tr.capacity) <= OVERFLOW_LIMIT)


@pytest.mark.parametrize("K", [1.5, 3, 8])
@pytest.mark.parametrize("tau", [0.02, 0.25])
def test_concordance_sample(K, tau):
    p = DelayPlant(K, 0.5, tau)
    if abs(phase_margin(p)) <= 0.05:
        pytest.skip("too close to the boundary")
    tr = run_scenario(loop(K, tau))
    converged = not tr.diverged and classify_response(tr.capacity) == "converged"
    assert converged == (winding_number(p) == 0)


def test_classify_response():
    t = np.linspace(0, 50, 5000)
    assert classify_response(1 - np.exp(-t)) == "converged"
    assert classify_response(np.exp(0.1 * t) * np.sin(3 * t)) == "diverging"
    assert classify_response(np.sin(3 * t)) == "indeterminate"
    assert classify_response([1.0, math.inf, 2.0, 3.0, 4.0]) == "diverging"


# -- determinism and shared streams ---------------------------------------------

def bursty(kind, seed=11):
    return scenario_from_dict({
        "version": 1, "seed": seed, "duration": 40.0, "initial_capacity": 10,
        "latency": {"mean": 0.2}, "control_interval": 0.5,
        "workload": {"segments": [[0, 600.0], [20, 1200.0]],
                     "bursts": [{"start": 5, "duration": 2, "multiplier": 2.0}]},
        "controller": {"kind": kind}})


def test_runs_are_bit_identical():
    a, b = run_scenario(bursty("csas")), run_scenario(bursty("csas"))
    for name in ("capacity", "demand", "latency_samples", "control_signal", "response_latency"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.decisions == b.decisions


def test_controllers_share_workload_and_latency():
    runs = [run_scenario(bursty(kind)) for kind in ("heuristic", "pid", "csas")]
    for other in runs[1:]:
        assert np.array_equal(runs[0].arrival_rate, other.arrival_rate)
        assert np.array_equal(runs[0].latency_samples, other.latency_samples)


def test_run_index_gives_fresh_streams():
    cfg = bursty("pid")
    a, b = run_scenario(cfg, 0), run_scenario(cfg, 1)
    assert not np.array_equal(a.arrival_rate, b.arrival_rate)
    assert not np.array_equal(run_scenario(bursty("pid", 12)).arrival_rate, a.arrival_rate)
