import itertools

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def brute_posterior(dist, z, i):
    """Posterior at ``i`` by scanning the whole V^L cube (independent of the
    support-filtering oracle)."""
    V = dist.vocab_size
    weights = np.zeros(V)
    for x in itertools.product(range(V), repeat=dist.length):
        if all(a == V or a == b for a, b in zip(z, x)):
            weights[x[i]] += dist.prob(x)
    return weights / weights.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
