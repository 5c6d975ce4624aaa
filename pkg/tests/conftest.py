from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_coords(rng, n, bit_depth, clustered=False):
    hi = 1 << bit_depth
    if clustered:
        centers = rng.integers(0, hi, size=(max(1, n // 50), 3))
        pick = centers[rng.integers(len(centers), size=n)]
        spread = max(1, hi // 64)
        c = pick + rng.integers(-spread, spread + 1, size=(n, 3))
        return np.clip(c, 0, hi - 1)
    return rng.integers(0, hi, size=(n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
