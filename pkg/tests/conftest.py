import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bitvo.geometry import CameraIntrinsics, RigidTransform

settings.register_profile(
    "bitvo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("bitvo")

_ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(number: int, passed: bool, detail: str):
        _ACCEPTANCE.append((number, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def K():
    return CameraIntrinsics()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

