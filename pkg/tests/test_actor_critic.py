import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import gradcheck
from offdae import envs
from offdae.actor_critic import (
    LearningCurve,
    ReplayBuffer,
    TrainConfig,
    actor_loss,
    critic_loss,
    ema_update,
    evaluate_greedy,
    greedy_policy,
    init_agent,
    make_batch,
    train,
)
from offdae.errors import ConfigurationError, DivergenceError
from offdae.mdp import (
    PolicyTable,
    Trajectory,
    advantage_exact,
    nature_advantage_exact,
    policy_evaluation_exact,
    sample_dataset,
)


def _seg(length, tag=0, truncated=True):
    return Trajectory(tuple((tag, 0, 0.0) for _ in range(length)), 0, truncated)


class TestConfig:
    def test_defaults_valid(self):
        assert TrainConfig().method == "offpolicy-dae"

    @pytest.mark.parametrize("over", [{"method": "x"}, {"n": 0}, {"gamma": 1.5}, {"tau": -0.1},
                                      {"transition_model_kind": "cvae"}, {"beta_kl": -1.0}])
    def test_invalid(self, over):
        with pytest.raises(ConfigurationError):
            TrainConfig(**over)

    def test_from_mapping(self):
        c = TrainConfig.from_mapping({"n": "4", "gamma": "0.9", "method": "dae"})
        assert c.n == 4 and c.gamma == 0.9 and c.method == "dae"
        with pytest.raises(ConfigurationError):
            TrainConfig.from_mapping({"bogus": "1"})
        with pytest.raises(ConfigurationError):
            TrainConfig.from_mapping({"n": "four"})


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(10)
        for k in range(6):
            buf.push(_seg(3, tag=k))
            assert buf.num_steps <= 10
        assert [seg.steps[0][0] for seg in buf.segments()] == [3, 4, 5]

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=40), st.integers(5, 20))
    def test_capacity_property(self, lengths, cap):
        buf = ReplayBuffer(cap)
        pushed = []
        for k, L in enumerate(lengths):
            buf.push(_seg(L, tag=k))
            pushed.append(k)
            assert buf.num_steps <= cap
            assert buf.num_steps == sum(len(s) for s in buf.segments())
        kept = [seg.steps[0][0] for seg in buf.segments()]
        # survivors are the most recent pushes, in order
        assert kept == pushed[len(pushed) - len(kept):]

    def test_sample(self):
        buf = ReplayBuffer(100)
        with pytest.raises(ConfigurationError):
            buf.sample(np.random.default_rng(0), 5)
        buf.push(_seg(2))
        out = buf.sample(np.random.default_rng(0), 5)
        assert sum(len(s) for s in out) >= 5


class TestEma:
    def _agent(self):
        agent = init_agent(envs.fig3(), TrainConfig())
        agent.V[:] = [1.0, 2.0, 3.0, 0.0]
        return agent

    def test_tau_one(self):
        agent = ema_update(self._agent(), 1.0)
        assert np.all(agent.V_ema == 0.0)

    def test_tau_zero(self):
        agent = ema_update(self._agent(), 0.0)
        np.testing.assert_array_equal(agent.V_ema, agent.V)

    def test_geometric_decay(self):
        agent = self._agent()
        for _ in range(500):
            ema_update(agent, 0.999)
        np.testing.assert_allclose(agent.V - agent.V_ema, agent.V * 0.999**500, rtol=1e-10)


class TestCritic:
    def _exact_agent(self, mdp, pi):
        agent = init_agent(mdp, TrainConfig())
        agent.V[:] = agent.V_ema[:] = policy_evaluation_exact(mdp, pi)
        agent.A[:] = agent.A_ema[:] = advantage_exact(mdp, pi)
        agent.B[:] = agent.B_ema[:] = nature_advantage_exact(mdp, pi).dense(fill=0.0)
        agent.logits[:] = agent.logits_ema[:] = np.log(np.where(mdp.action_mask, pi.probs, 1.0))
        return agent

    def test_exact_tables_zero_loss(self):
        mdp = envs.fig4()
        pi = envs.random_policy(3, mdp)
        agent = self._exact_agent(mdp, pi)
        segs = [t for t, _ in sample_dataset(mdp, PolicyTable.uniform(mdp), 40, 0)]
        cfg = TrainConfig(method="offpolicy-dae", gamma=1.0, n=8)
        loss, _ = critic_loss(make_batch(segs, 8), agent, cfg, mdp.transition)
        assert loss < 1e-9

    def test_zero_tables_single_window(self):
        mdp = envs.fig3()
        agent = init_agent(mdp, TrainConfig())
        seg = Trajectory(((0, 0, 0.5), (2, 0, 1.0)), 3, False)
        batch = make_batch([seg], 2)
        for method in ("uncorrected", "dae", "offpolicy-dae"):
            cfg = TrainConfig(method=method, gamma=1.0, n=2)
            loss, _ = critic_loss(batch, agent, cfg, mdp.transition)
            # windows: full return 1.5 and the suffix return 1.0
            assert loss == pytest.approx((1.5**2 + 1.0**2) / 2)
        # tree backup weights the taken action at state 3 by its target probability 1/2
        loss, _ = critic_loss(batch, agent, TrainConfig(method="tree", gamma=1.0, n=2), mdp.transition)
        assert loss == pytest.approx((1.0**2 + 1.0**2) / 2)

    @given(st.integers(0, 10**6))
    def test_gradients(self, seed):
        agent, config, batch, probs = gradcheck.random_problem(seed)
        assert gradcheck.critic_error(agent, config, batch, probs) < 1e-6

    def test_converges_to_oracle_under_fixed_behavior(self):
        # full-batch gradient descent on a fixed behavior dataset with a fixed target policy
        mdp = envs.fig4()
        mu = PolicyTable.uniform(mdp)
        pi = envs.random_policy(8, mdp)
        cfg = TrainConfig(method="offpolicy-dae", gamma=1.0, n=2)
        agent = init_agent(mdp, cfg)
        agent.logits[:] = agent.logits_ema[:] = np.log(np.where(mdp.action_mask, pi.probs, 1.0))
        segs = []
        for traj, _ in sample_dataset(mdp, mu, 1000, 1):
            for k in range(0, len(traj), cfg.n):
                part = traj.steps[k:k + cfg.n]
                end = traj.steps[k + cfg.n][0] if k + cfg.n < len(traj) else traj.final_state
                segs.append(Trajectory(part, end, k + cfg.n < len(traj)))
        batch = make_batch(segs, cfg.n)
        for _ in range(600):
            _, g = critic_loss(batch, agent, cfg, mdp.transition)
            for name in ("V", "A", "B"):
                getattr(agent, name)[:] -= 1.0 * g[name]
            ema_update(agent, 0.9)
        V, A = policy_evaluation_exact(mdp, pi), advantage_exact(mdp, pi)
        B = nature_advantage_exact(mdp, pi)
        live = ~mdp.terminal
        assert np.max(np.abs(agent.V[live] - V[live])) < 0.02
        A_c = agent.centered_A()
        assert np.max(np.abs((A_c - A)[mdp.action_mask & live[:, None]])) < 0.02
        B_c = agent.B - np.sum(mdp.transition * agent.B, axis=2, keepdims=True)
        for key, v in B.items():
            assert abs(B_c[key] - v) < 0.02


class TestActor:
    def test_stationary_point(self):
        mdp = envs.fig4()
        agent = init_agent(mdp, TrainConfig())
        agent.logits[:] = agent.logits_ema[:] = np.random.default_rng(0).normal(size=agent.logits.shape)
        states = np.array([0, 2, 2, 3])
        actions = np.array([0, 0, 1, 0])
        loss, g = actor_loss(states, actions, agent, TrainConfig())
        assert abs(loss) < 1e-15 and np.all(np.abs(g) < 1e-15)

    def test_kl_pulls_toward_ema(self):
        r = np.random.default_rng(1)
        agent = init_agent(envs.random_mdp(0, 4, 3), TrainConfig())
        agent.logits[:] = r.normal(size=(4, 3))
        agent.logits_ema[:] = r.normal(size=(4, 3))
        states = np.array([0, 1, 2])
        _, g = actor_loss(states, np.zeros(3, dtype=int), agent, TrainConfig(beta_kl=1e6))
        pi, pe = agent.policy(), agent.policy_ema()
        step = -g[states]
        # moving along the negative gradient shrinks the log-ratio
        direction = (np.log(pe[states]) - np.log(pi[states]))
        direction -= direction.mean(axis=1, keepdims=True)
        assert np.sum(step * direction) > 0

    @given(st.integers(0, 10**6))
    def test_gradients(self, seed):
        agent, config, batch, _ = gradcheck.random_problem(seed)
        assert gradcheck.actor_error(agent, config, batch) < 1e-6


class TestTraining:
    def test_deterministic(self):
        mdp = envs.gridworld(5, 5, 0.2)
        cfg = TrainConfig(total_steps=3000, initial_steps=500, eval_interval=500, seed=4)
        _, c1 = train(mdp, cfg)
        _, c2 = train(mdp, cfg)
        assert c1 == c2 and len(c1.steps) == 6

    def test_centering_after_training(self):
        mdp = envs.gridworld(5, 5, 0.2)
        agent, _ = train(mdp, TrainConfig(total_steps=2000, initial_steps=200, eval_interval=1000))
        pi_e = agent.policy_ema()
        assert np.max(np.abs(np.sum(pi_e * agent.centered_A(), axis=1))) < 1e-9

    @pytest.mark.parametrize("method", ["uncorrected", "dae", "offpolicy-dae", "tree"])
    def test_chain_optimal(self, method):
        mdp = envs.chain(5, 0.9)
        cfg = TrainConfig(method=method, gamma=0.9, total_steps=50_000, learning_rate=0.5, tau=0.99,
                          max_episode_len=50, eval_interval=5000)
        agent, _ = train(mdp, cfg)
        greedy = greedy_policy(agent.logits, agent.mask)
        assert np.all(greedy[:4] == 1)

    def test_empirical_model(self):
        mdp = envs.fig4()
        _, curve = train(mdp, TrainConfig(gamma=1.0, transition_model_kind="empirical", total_steps=2000,
                                          initial_steps=100, eval_interval=1000))
        assert len(curve.steps) == 2

    def test_divergence_guard(self):
        mdp = envs.chain(5, 0.9)
        cfg = TrainConfig(method="dae", gamma=0.9, learning_rate=500.0, total_steps=5000, initial_steps=100)
        with pytest.raises(DivergenceError, match="seed 0"):
            train(mdp, cfg)


def test_learning_curve_monotone():
    c = LearningCurve()
    c.append(10, 1.0, 0.1)
    with pytest.raises(ValueError):
        c.append(10, 1.0, 0.1)


def test_greedy_ties_lowest_index():
    logits = np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]])
    mask = np.array([[True, True, True], [True, False, True]])
    np.testing.assert_array_equal(greedy_policy(logits, mask), [0, 2])


def test_evaluate_greedy_deterministic_chain():
    mdp = envs.chain(5, 0.9)
    mean, se = evaluate_greedy(mdp, np.ones(5, dtype=int), 10, 50, np.random.default_rng(0))
    assert mean == 1.0 and se == 0.0
