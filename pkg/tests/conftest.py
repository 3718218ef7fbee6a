import os
import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def suite_timings():
    """Wall seconds spent simulating and fitting each validation suite."""
    return {}


@pytest.fixture(scope="session")
def null_suite(suite_timings):
    """Conjugate null design: simulated samples and the two-stage fit."""
    from bayesoc.pipeline import default_suites, fit_samples, simulate

    cfg = default_suites()[0]
    t0 = time.perf_counter()
    pairs = simulate(cfg)
    fit = fit_samples([s for s, r in pairs if r == "train"], cfg)
    suite_timings["null"] = time.perf_counter() - t0
    return cfg, pairs, fit


@pytest.fixture(scope="session")
def power_suite():
    """Conjugate power design (12 training, 28 test scenarios) and its fit."""
    from bayesoc.pipeline import default_suites, fit_samples, simulate

    cfg = default_suites()[1]
    t0 = time.perf_counter()
    pairs = simulate(cfg)
    fit = fit_samples([s for s, r in pairs if r == "train"], cfg)
    return cfg, pairs, fit, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
