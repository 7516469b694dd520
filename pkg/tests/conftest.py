import hypothesis
import numpy as np
import pytest

from tradefool.market_data import Bar, synthesize_bars

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.load_profile("default")


def make_bar(timestamp, open_, high, low, close, volume=0.0) -> Bar:
    bar = Bar(timestamp=timestamp, open=open_, high=high, low=low, close=close, volume=volume)
    bar.validate()
    return bar


@pytest.fixture(scope="session")
def flat_bars():
    return [make_bar(60 * i, 100.0, 100.0, 100.0, 100.0) for i in range(400)]


@pytest.fixture(scope="session")
def trending_bars():
    return synthesize_bars(2000, drift=2e-4, volatility=0.004, momentum=0.3, seed=7)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
