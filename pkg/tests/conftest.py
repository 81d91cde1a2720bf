import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seqlink import sim
from seqlink.stack import SlcStack

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def noiseless_stack(shape=(24, 24), count=12, bowl_rate=5.0, tropo_std=0.3, seed=0, amplitude=None):
    """Fully coherent complex128 stack and its truth scene."""
    dates = sim.regular_dates(count)
    truth = sim.build_truth_scene(shape, dates, bowl_rate, tropo_std, seed)
    if amplitude is None:
        amplitude = 1.0 + np.random.default_rng(seed + 100).random(shape)
    layers = amplitude[None] * np.exp(1j * truth.phase)
    return SlcStack(dates, layers.astype(np.complex128)), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> list of (label, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list] = {}


def record_acceptance(number: int, label: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.setdefault(number, []).append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        body = "; ".join(f"{label} {'PASS' if ok else 'FAIL'}{f' ({d})' if d else ''}" for label, ok, d in parts)
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {body}")
