from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from forumcast.corpus import MarketSeries, Post
from forumcast.synth import INDICATORS, SynthParams, generate


def make_market(n=10, start=date(2024, 1, 1), stock="T", close=None, weekdays_only=True):
    dates = []
    d = start
    while len(dates) < n:
        if not weekdays_only or d.weekday() < 5:
            dates.append(d)
        d += timedelta(days=1)
    close = np.linspace(10.0, 20.0, n) if close is None else np.asarray(close, float)
    rng = np.random.default_rng(0)
    indicators = {name: rng.normal(size=n) for name in INDICATORS}
    return MarketSeries(stock, dates, close, indicators)


def make_post(pid="1", ts=None, title="涨", body="跌", reads=1, comments=0, likes=0, stock="T"):
    ts = ts or datetime(2024, 1, 2, 1, 0, tzinfo=timezone.utc)
    return Post(pid, stock, ts, title, body, reads, comments, likes)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthParams(days=80, posts_per_day=8, labeled_size=150, seed=3))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
