import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("MLMKIT_REGEN_GOLDEN") == "1"


def golden_array(name: str, value: np.ndarray) -> np.ndarray:
    """Stored reference for ``name``; written on the first (verified) run."""
    path = GOLDEN / f"{name}.npy"
    if REGEN or not path.exists():
        GOLDEN.mkdir(exist_ok=True)
        np.save(path, value)
    return np.load(path)


def golden_text(name: str, value: str) -> str:
    path = GOLDEN / name
    if REGEN or not path.exists():
        GOLDEN.mkdir(exist_ok=True)
        path.write_text(value, encoding="utf-8", newline="\n")
    return path.read_text(encoding="utf-8")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n][1])
