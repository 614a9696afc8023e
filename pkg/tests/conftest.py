import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from offdae import envs
from offdae.mdp import PolicyTable

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@st.composite
def random_instances(draw, max_states=6, max_actions=3, discounts=(1.0, 0.9)):
    """(mdp, behavior, target) with a uniform behavior and a random target policy."""
    seed = draw(st.integers(0, 2**31 - 1))
    S = draw(st.integers(2, max_states))
    A = draw(st.integers(1, max_actions))
    gamma = draw(st.sampled_from(discounts))
    mdp = envs.random_mdp([seed, 0], S, A, gamma)
    return mdp, PolicyTable.uniform(mdp), envs.random_policy([seed, 1], mdp)


@pytest.fixture
def fig3():
    return envs.fig3()


@pytest.fixture
def fig4():
    return envs.fig4()


def rng(*seed):
    return np.random.default_rng(list(seed))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
