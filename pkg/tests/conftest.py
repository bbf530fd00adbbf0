import numpy as np
import pytest

from mwiod.channel import ChannelParams, LinkRates
from mwiod.flows import FlowSpec, TeamConfig


@pytest.fixture
def fig2_params():
    return ChannelParams(-53.0, -70.0, 2.52, 0.2, 0.6)


def uniform_rates(n, mean, var):
    m = np.full((n, n), float(mean))
    v = np.full((n, n), float(var))
    np.fill_diagonal(m, 0.0)
    np.fill_diagonal(v, 0.0)
    return LinkRates(m, v)


@pytest.fixture
def two_node():
    """Source 0 -> destination 1 over one link with mean 0.8, variance 0.04."""
    team = TeamConfig(np.array([[0.0, 0.0], [1.0, 0.0]]), (0, 1), ())
    rates = uniform_rates(2, 0.8, 0.04)
    flow = FlowSpec((0,), (1,), 0.15, 0.7)
    return team, rates, flow


# criterion number -> (title, passed, seconds, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, float, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, secs, detail = ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f} s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
