"""Shared fixtures and the acceptance summary printed after the run."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmfcorrect.rig import Experiment, FEATURES, OperatingPoint, RigConfig, TARGET, generate_dataset
from cmfcorrect.series import SampledSeries

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=50
)
settings.load_profile("default")

CRITERIA = {
    1: "complexity counts (57/96, 433/832, 809/6528)",
    2: "analytic vs finite-difference gradients",
    3: "metrics vs brute-force oracle",
    4: "129-tap anti-alias filter",
    5: "leakage suite",
    6: "model ordering on the synthetic benchmark",
    7: "4 s CNN p95 below half the no-model p95",
    8: "byte-identical reruns from a manifest",
}
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "xfail"
        elif rep.passed:
            status = "pass"
        elif rep.skipped:
            status = "skip"
        else:
            status = "fail"
        _outcomes.setdefault(n, []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        results = _outcomes.get(n)
        if not results:
            tr.write_line(f"criterion {n}: NOT RUN  {CRITERIA[n]}")
            continue
        statuses = {s for _, s in results}
        if "fail" in statuses:
            verdict = "FAIL"
        elif statuses == {"pass"}:
            verdict = "PASS"
        elif "pass" in statuses:
            verdict = "PARTIAL"
        else:
            verdict = "XFAIL"
        extra = ""
        xfailed = [name for name, s in results if s == "xfail"]
        if xfailed:
            extra = f"  (expected failures: {', '.join(xfailed)})"
        tr.write_line(f"criterion {n}: {verdict}  {CRITERIA[n]}{extra}")


def make_experiment(group_id, n=20, rate=14.3, gvf=0.2, seed=0, data=None):
    """Small hand-built experiment with random but valid readings."""
    rng = np.random.default_rng(seed)
    if data is None:
        data = rng.uniform(1.0, 2.0, (len(FEATURES), n))
    truth = rng.uniform(1000.0, 2000.0, (1, data.shape[1]))
    op = OperatingPoint(0.5, 1.0, 500.0, 1500.0, gvf, 2.0, 25.0)
    return Experiment(
        group_id, op, data.shape[1] / rate, rate,
        SampledSeries(data, FEATURES, rate), SampledSeries(truth, (TARGET,), rate),
    )


@pytest.fixture(scope="session")
def small_config():
    return RigConfig(n_baselines=4, gvf_steps_per_baseline=6, seed=11)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return generate_dataset(small_config)


@pytest.fixture(scope="session")
def quiet_config():
    return replace(RigConfig(n_baselines=3, seed=5), noise_scale=0.0)
