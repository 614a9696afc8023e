import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instances
from offdae import envs
from offdae.design import (
    design_from_dataset,
    design_from_windows,
    enumerate_windows,
    episode_distribution,
    expand_windows,
    occupancy,
    population_design,
    trajectory_windows,
)
from offdae.errors import ConfigurationError
from offdae.mdp import Dataset, PolicyTable, Trajectory


def _augmented(design):
    Z = np.hstack([design.zV, design.zA, design.zB, design.zE, design.y[:, None]])
    return (Z * design.weight[:, None]).T @ Z


def test_windows_of_trajectory():
    t = Trajectory(((0, 0, 1.0), (1, 0, 2.0), (2, 0, 3.0)), 3, False)
    ws = list(trajectory_windows(t, 1))
    assert [len(w) for w in ws] == [2, 2, 1]
    assert ws[0].final_state == 2 and ws[0].truncated
    assert ws[-1].final_state == 3 and not ws[-1].truncated
    assert list(trajectory_windows(t, None)) == [t]


def test_expand_merges_weights():
    t = Trajectory(((0, 0, 1.0),), 1, False)
    w = expand_windows(Dataset((t, t), (2.0, 3.0)), 0)
    assert w == {(((0, 0, 1.0),), 1, True): 5.0}
    with pytest.raises(ConfigurationError):
        expand_windows(Dataset((t,)), -1)


def test_episode_distribution_fig4():
    mdp = envs.fig4()
    eps = episode_distribution(mdp, PolicyTable.uniform(mdp))
    assert len(eps) == 8
    assert sum(p for _, p in eps) == pytest.approx(1.0)


def test_occupancy_fig3():
    mdp = envs.fig3()
    d = occupancy(mdp, PolicyTable.uniform(mdp))
    np.testing.assert_allclose(d, [0.9, 0.1, 1.0, 0.0])


def test_enumeration_matches_episode_expansion():
    mdp = envs.fig4()
    mu = PolicyTable.uniform(mdp)
    eps = episode_distribution(mdp, mu)
    data = Dataset(tuple(t for t, _ in eps), tuple(p for _, p in eps))
    for n in (0, 1, None):
        a, b = enumerate_windows(mdp, mu, n), expand_windows(data, n)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-14)


@given(random_instances(max_states=5, max_actions=2), st.sampled_from([0, 1, 2]))
def test_population_design_matches_enumeration(inst, n):
    # same weighted second moments, target included, as exhaustive enumeration
    mdp, mu, _ = inst
    S, A = mdp.num_states, mdp.num_actions
    exact = design_from_windows(enumerate_windows(mdp, mu, n), S, A, mdp.discount, n)
    np.testing.assert_allclose(_augmented(population_design(mdp, mu, n)), _augmented(exact), atol=1e-11)


@pytest.mark.parametrize("name", ["fig3", "fig4", "counterexample"])
@pytest.mark.parametrize("n", [0, 1, None])
def test_population_design_matches_episodes(name, n):
    mdp = envs.build(name)
    mu = envs.random_policy(5, mdp)
    S, A = mdp.num_states, mdp.num_actions
    exact = design_from_windows(enumerate_windows(mdp, mu, n), S, A, mdp.discount, n)
    np.testing.assert_allclose(_augmented(population_design(mdp, mu, n)), _augmented(exact), atol=1e-12)


def test_design_from_dataset_rows():
    t = Trajectory(((0, 0, 1.0), (1, 1, 2.0)), 2, False)
    d = design_from_dataset(Dataset((t,)), 0.5, 0, 3, 2)
    assert d.num_rows == 2
    assert d.visited.tolist() == [True, True, False]
    assert d.pairs[0, 0] and d.pairs[1, 1] and not d.pairs[0, 1]
