"""Independent reference computations shared by the test modules.

Nothing here imports the package: margins and latencies are evaluated in
mpmath from the closed forms, root counts come from the Lambert-W branches
of the characteristic equation, and distances from a brute-force dense grid.
"""

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def oracle_phase_margin(K, T, tau):
    K, T, tau = mp.mpf(K), mp.mpf(T), mp.mpf(tau)
    if K <= 1:
        return float(mp.pi)
    wc = mp.sqrt(K ** 2 - 1) / T
    return float(mp.pi - mp.atan(T * wc) - wc * tau)


def oracle_max_latency(K, T, floor=0.0):
    K, T = mp.mpf(K), mp.mpf(T)
    wc = mp.sqrt(K ** 2 - 1) / T
    return float((mp.pi - floor - mp.atan(T * wc)) / wc)


def oracle_crossover(K, T):
    # bisection on |L(i w)| = 1, no closed form used
    f = lambda w: K / mp.sqrt(1 + (T * w) ** 2) - 1
    return float(mp.findroot(f, (mp.mpf("1e-9"), mp.mpf(10) ** 6), solver="bisect"))


def oracle_rhp_roots(K, T, tau, branches=80):
    """Closed-loop RHP roots of T s + 1 + K exp(-tau s) = 0.

    With z = s + 1/T the equation becomes tau z exp(tau z) = a, so every root
    is W_k(a)/tau - 1/T for some Lambert-W branch k.
    """
    K, T, tau = mp.mpf(K), mp.mpf(T), mp.mpf(tau)
    a = -(K * tau / T) * mp.exp(tau / T)
    return sum(1 for k in range(-branches, branches + 1)
               if mp.re(mp.lambertw(a, k) / tau - 1 / T) > 0)


def oracle_min_distance(K, T, tau, lo=1e-4, hi=1e4, n=1_000_000):
    w = np.geomspace(lo, hi, n)
    d = np.abs(1 + K * np.exp(-1j * w * tau) / (1j * w * T + 1))
    i = int(d.argmin())
    fine = np.linspace(w[max(i - 1, 0)], w[min(i + 1, n - 1)], 100_001)
    dd = np.abs(1 + K * np.exp(-1j * fine * tau) / (1j * fine * T + 1))
    return float(dd.min())


# -- acceptance summary --------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("_criterion")
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = [f"{k}: {v}" for k, v in report.user_properties if k != "_criterion"]
        _CRITERIA[number] = (report.outcome == "passed", "; ".join(details))


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("_criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, details = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {details}")
