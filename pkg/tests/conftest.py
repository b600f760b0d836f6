import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cordgt import numerics as nx
from cordgt.events import from_arrays

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _float64_mode():
    """Every test starts in 64-bit mode with gradients enabled."""
    with nx.using_mode("test"):
        yield


def random_store(rng, num_nodes=12, num_events=80, edge_dim=0, horizon=100.0, integer_ts=True):
    src = rng.integers(0, num_nodes, num_events)
    dst = rng.integers(0, num_nodes, num_events)
    ts = rng.integers(1, int(horizon), num_events).astype(float) if integer_ts \
        else rng.uniform(0, horizon, num_events)
    feats = rng.normal(size=(num_events, edge_dim)) if edge_dim else None
    return from_arrays(src, dst, ts, num_nodes, feats)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Gate:
    """Collects one acceptance verdict per criterion for the terminal summary."""

    lines: dict = {}

    @classmethod
    def record(cls, n: int, ok: bool, detail: str) -> None:
        cls.lines[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, cls.lines[n]

    @classmethod
    def skip(cls, n: int, reason: str) -> None:
        cls.lines[n] = f"criterion {n:2d}: SKIP  {reason}"
        pytest.skip(reason)


@pytest.fixture
def gate():
    return Gate


def pytest_terminal_summary(terminalreporter):
    if Gate.lines:
        terminalreporter.section("acceptance")
        for n in sorted(Gate.lines):
            terminalreporter.write_line(Gate.lines[n])
