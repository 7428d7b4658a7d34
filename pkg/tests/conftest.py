from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rotvote.camera import CameraIntrinsics

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cam() -> CameraIntrinsics:
    return CameraIntrinsics(f=400.0, cx=240.0, cy=135.0, width=480, height=270)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; returns ``ok`` so the test can assert it."""
    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config.stash.setdefault(_VERDICTS, []).append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
