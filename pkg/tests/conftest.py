import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from archgen.graph import new_graph
from archgen.space import PRESETS

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def graphs(draw, max_n=6, d_ops=3, with_roles=None):
    n = draw(st.integers(2 if with_roles else 1, max_n))
    m = n * (n - 1) // 2
    bits = "".join(draw(st.lists(st.sampled_from("01"), min_size=m, max_size=m)))
    ops = draw(st.lists(st.integers(0, d_ops - 1), min_size=n, max_size=n))
    roles = None
    want_roles = draw(st.booleans()) if with_roles is None else with_roles
    if want_roles and n >= 2:
        i = draw(st.integers(0, n - 1))
        o = draw(st.integers(0, n - 1).filter(lambda x: x != i))
        roles = (i, o)
    return new_graph(n, bits, ops, roles)


def random_graph(rng, n, p=0.5, d_ops=3, roles=None):
    m = n * (n - 1) // 2
    bits = "".join("1" if b else "0" for b in rng.random(m) < p)
    return new_graph(n, bits, rng.integers(0, d_ops, n).tolist(), roles)


@pytest.fixture
def tiny():
    return PRESETS["tiny"]


@pytest.fixture
def nb101():
    return PRESETS["nasbench101-like"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion's verdict and asserts it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def report(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
        lines[n] = line
        print(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
