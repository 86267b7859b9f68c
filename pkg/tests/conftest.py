import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evotrade.market_data import BarSeries, synthesize  # noqa: E402
from evotrade.pipeline import FixtureSpec, fixture_objectives  # noqa: E402


@pytest.fixture(scope="session")
def objectives():
    return fixture_objectives(FixtureSpec())


@pytest.fixture
def small_series():
    return synthesize(3, 600, signal_coef=3.5e-4)


def make_series(close, spread=0.001, start=0):
    """Bars whose open is the previous close and whose range pads the body."""
    close = np.asarray(close, dtype=float)
    open_ = np.concatenate([[close[0]], close[:-1]])
    high = np.maximum(open_, close) * (1 + spread)
    low = np.minimum(open_, close) * (1 - spread)
    ts = start + np.arange(len(close))
    return BarSeries(ts, open_, high, low, close, np.ones(len(close)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
