"""Tabular off-policy actor-critic with replayed n-step segments.

Parameters are plain tables: state values ``V``, raw advantages ``A_raw``,
raw nature advantages ``B_raw`` and policy logits, each with an EMA copy.
Advantages are centered at use time under the EMA policy, nature
advantages under the transition model, so the centering constraints hold
exactly for whatever the raw tables contain.

Critic backups:

``uncorrected``
    ``V(s_i) + A(s_i, a_i)`` regressed on the n-step return with an EMA
    value bootstrap.
``dae`` / ``offpolicy-dae``
    the window identity with advantages (and nature advantages) summed over
    every step of the window.
``tree``
    ``V(s_i) + A(s_i, a_i)`` regressed on the tree-backup target built from
    the EMA tables.

Every suffix of a stored segment is a window.  Gradients are analytic.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .mdp import FiniteMdp, PolicyTable, Trajectory, softmax

__all__ = [
    "METHODS",
    "TrainConfig",
    "AgentState",
    "ReplayBuffer",
    "LearningCurve",
    "Batch",
    "make_batch",
    "critic_loss",
    "actor_loss",
    "ema_update",
    "init_agent",
    "train",
    "greedy_policy",
    "evaluate_greedy",
]

METHODS = ("uncorrected", "dae", "offpolicy-dae", "tree")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "offpolicy-dae"
    n: int = 8
    gamma: float = 0.99
    learning_rate: float = 0.05
    tau: float = 0.999
    beta_kl: float = 3.0
    batch_size: int = 256
    steps_per_update: int = 32
    buffer_capacity: int = 10_000
    initial_steps: int = 1_000
    total_steps: int = 50_000
    seed: int = 0
    transition_model_kind: str = "oracle"
    num_actors: int = 8
    max_episode_len: int = 100
    eval_interval: int = 1_000
    eval_episodes: int = 100

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.transition_model_kind not in ("oracle", "empirical"):
            raise ConfigurationError("transition_model_kind must be 'oracle' or 'empirical'")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        positive = (
            "n", "learning_rate", "batch_size", "steps_per_update", "buffer_capacity", "total_steps",
            "num_actors", "max_episode_len", "eval_interval", "eval_episodes",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.beta_kl < 0 or self.initial_steps < 0:
            raise ConfigurationError("beta_kl and initial_steps must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string or typed values; unknown keys are errors."""
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigurationError(f"unknown config key {key!r}")
            kind = kinds[key]
            try:
                if kind in ("int", int):
                    out[key] = int(raw)
                elif kind in ("float", float):
                    out[key] = float(raw)
                else:
                    out[key] = str(raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
        return cls(**out)


class ReplayBuffer:
    """FIFO store of trajectory segments with capacity counted in steps."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ConfigurationError("buffer capacity must be positive")
        self.capacity = capacity
        self._segments: deque[Trajectory] = deque()
        self.num_steps = 0

    def __len__(self) -> int:
        return len(self._segments)

    def segments(self) -> list[Trajectory]:
        return list(self._segments)

    def push(self, segment: Trajectory) -> None:
        if len(segment) > self.capacity:
            raise ConfigurationError("segment longer than buffer capacity")
        self._segments.append(segment)
        self.num_steps += len(segment)
        while self.num_steps > self.capacity:
            self.num_steps -= len(self._segments.popleft())

    def sample(self, rng: np.random.Generator, batch_steps: int) -> list[Trajectory]:
        """Segments drawn uniformly with replacement until ``batch_steps`` steps are collected."""
        if not self._segments:
            raise ConfigurationError("cannot sample from an empty buffer")
        out, total = [], 0
        while total < batch_steps:
            seg = self._segments[int(rng.integers(len(self._segments)))]
            out.append(seg)
            total += len(seg)
        return out


@dataclass
class AgentState:
    logits: np.ndarray
    V: np.ndarray
    A: np.ndarray
    B: np.ndarray
    logits_ema: np.ndarray
    V_ema: np.ndarray
    A_ema: np.ndarray
    B_ema: np.ndarray
    mask: np.ndarray
    buffer: ReplayBuffer
    steps: int = 0
    counts: np.ndarray | None = None

    def policy(self) -> np.ndarray:
        return softmax(self.logits, self.mask)

    def policy_ema(self) -> np.ndarray:
        return softmax(self.logits_ema, self.mask)

    def centered_A(self, ema: bool = False) -> np.ndarray:
        """Advantages centered under the EMA policy."""
        A = self.A_ema if ema else self.A
        pi = self.policy_ema()
        return A - np.sum(pi * A, axis=1, keepdims=True)


def init_agent(mdp: FiniteMdp, config: TrainConfig) -> AgentState:
    S, A = mdp.num_states, mdp.num_actions
    zeros = lambda *shape: np.zeros(shape)  # noqa: E731
    return AgentState(
        logits=zeros(S, A), V=zeros(S), A=zeros(S, A), B=zeros(S, A, S),
        logits_ema=zeros(S, A), V_ema=zeros(S), A_ema=zeros(S, A), B_ema=zeros(S, A, S),
        mask=np.array(mdp.action_mask, dtype=bool), buffer=ReplayBuffer(config.buffer_capacity),
        counts=zeros(S, A, S),
    )


def ema_update(agent: AgentState, tau: float) -> AgentState:
    for name in ("logits", "V", "A", "B"):
        ema = getattr(agent, name + "_ema")
        ema *= tau
        ema += (1.0 - tau) * getattr(agent, name)
    return agent


@dataclass(frozen=True)
class Batch:
    """Suffix windows of a list of segments in padded form (``m`` windows, width ``K``)."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    valid: np.ndarray
    end: np.ndarray
    end_live: np.ndarray
    length: np.ndarray
    segments: tuple = ()


def make_batch(segments: list[Trajectory], width: int | None = None) -> Batch:
    s = np.array([st[0] for seg in segments for st in seg.steps], dtype=int)
    a = np.array([st[1] for seg in segments for st in seg.steps], dtype=int)
    r = np.array([st[2] for seg in segments for st in seg.steps], dtype=float)
    s2 = np.array([x for seg in segments for x in seg.next_states()], dtype=int)
    lens = np.array([len(seg) for seg in segments], dtype=int)
    K = int(lens.max()) if width is None else width
    seg_end = np.repeat(np.cumsum(lens), lens)
    start = np.arange(len(s))
    pos = start[:, None] + np.arange(K)[None, :]
    valid = pos < seg_end[:, None]
    pos = np.where(valid, pos, start[:, None])
    end = np.repeat([seg.final_state for seg in segments], lens)
    live = np.repeat([seg.truncated for seg in segments], lens)
    return Batch(s[pos], a[pos], r[pos], s2[pos], valid, end, live, seg_end - start, tuple(segments))


def _model_probs(agent: AgentState, mdp: FiniteMdp, kind: str) -> np.ndarray:
    if kind == "oracle":
        return np.asarray(mdp.transition)
    counts = agent.counts
    total = counts.sum(axis=2, keepdims=True)
    return np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)


def _tree_targets(batch: Batch, agent: AgentState, gamma: float) -> np.ndarray:
    """Tree-backup target for every suffix window, one backward pass per segment."""
    pi = agent.policy_ema()
    Q = agent.V_ema[:, None] + agent.centered_A(ema=True)
    v_next = np.sum(pi * Q, axis=1)
    out = np.empty(len(batch.length))
    i = 0
    for seg in batch.segments:
        steps = seg.steps
        L = len(steps)
        value = 0.0
        for k in range(L - 1, -1, -1):
            r = steps[k][2]
            if k == L - 1:
                value = r + (gamma * v_next[seg.final_state] if seg.truncated else 0.0)
            else:
                sn, an, _ = steps[k + 1]
                value = r + gamma * (v_next[sn] - pi[sn, an] * Q[sn, an] + pi[sn, an] * value)
            out[i + k] = value
        i += L
    return out


def critic_loss(batch: Batch, agent: AgentState, config: TrainConfig, probs: np.ndarray):
    """Mean squared critic residual and its gradients w.r.t. ``V``, ``A`` and ``B``.

    ``probs`` is the transition model used to center B (ignored unless the
    method is ``offpolicy-dae``).
    """
    g = config.gamma
    method = config.method
    m, K = batch.s.shape
    pi_e = agent.policy_ema()
    A_c = agent.centered_A()
    disc = (g ** np.arange(K))[None, :] * batch.valid
    s0, a0 = batch.s[:, 0], batch.a[:, 0]

    S, A = agent.A.shape
    if method == "tree":
        target = _tree_targets(batch, agent, g)
        pred = agent.V[s0] + A_c[s0, a0]
    else:
        boot = np.where(batch.end_live, agent.V_ema[batch.end], 0.0)
        target = np.sum(disc * batch.r, axis=1) + g ** batch.length * boot
        if method == "uncorrected":
            pred = agent.V[s0] + A_c[s0, a0]
        else:
            pred = agent.V[s0] + np.sum(disc * A_c[batch.s, batch.a], axis=1)
            if method == "offpolicy-dae":
                B_mean = np.sum(probs * agent.B, axis=2)
                B_c = agent.B[batch.s, batch.a, batch.s2] - B_mean[batch.s, batch.a]
                pred = pred + g * np.sum(disc * B_c, axis=1)
    delta = pred - target
    loss = float(np.mean(delta**2))
    d = 2.0 * delta / m

    gV = np.bincount(s0, weights=d, minlength=S).astype(float)
    if method in ("uncorrected", "tree"):
        coef_s, coef_a, coef = s0, a0, d
    else:
        c = d[:, None] * disc
        coef_s, coef_a, coef = batch.s[batch.valid], batch.a[batch.valid], c[batch.valid]
    gA = np.bincount(coef_s * A + coef_a, weights=coef, minlength=S * A).reshape(S, A)
    gA -= np.bincount(coef_s, weights=coef, minlength=S)[:, None] * pi_e
    if method == "offpolicy-dae":
        c = (g * d[:, None] * disc)[batch.valid]
        sa = batch.s[batch.valid] * A + batch.a[batch.valid]
        gB = np.bincount(sa * S + batch.s2[batch.valid], weights=c, minlength=S * A * S).reshape(S, A, S)
        gB -= np.bincount(sa, weights=c, minlength=S * A).reshape(S, A)[:, :, None] * probs
    else:
        gB = np.zeros_like(agent.B)
    return loss, {"V": gV, "A": gA, "B": gB}


def actor_loss(states: np.ndarray, actions: np.ndarray, agent: AgentState, config: TrainConfig):
    """Policy loss with normalized advantages and a KL pull toward the EMA policy.

    Advantages are constants here.  Their scale is the standard deviation of
    the taken-action advantages in the batch.
    """
    A_c = agent.centered_A()
    var = float(np.var(A_c[states, actions]))
    A_n = A_c / np.sqrt(var + 1e-8)
    mask = agent.mask
    pi = agent.policy()[states]
    pi_e = agent.policy_ema()[states]
    m_s = mask[states]
    log_pi = np.log(np.where(m_s, pi, 1.0))
    log_pe = np.log(np.where(m_s, pi_e, 1.0))
    kl = np.sum(np.where(m_s, pi * (log_pi - log_pe), 0.0), axis=1)
    adv = A_n[states]
    adv = np.where(m_s, adv, 0.0)
    gain = np.sum(pi * adv, axis=1)
    loss = float(np.mean(-gain + config.beta_kl * kl))
    m = len(states)
    grad_rows = (-pi * (adv - gain[:, None]) + config.beta_kl * pi * (log_pi - log_pe - kl[:, None])) / m
    grad_rows = np.where(m_s, grad_rows, 0.0)
    g_logits = np.zeros_like(agent.logits)
    np.add.at(g_logits, states, grad_rows)
    return loss, g_logits


@dataclass
class LearningCurve:
    steps: list = field(default_factory=list)
    mean_return: list = field(default_factory=list)
    stderr: list = field(default_factory=list)

    def append(self, step: int, mean: float, se: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError("learning-curve steps must increase")
        self.steps.append(int(step))
        self.mean_return.append(float(mean))
        self.stderr.append(float(se))


def greedy_policy(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Argmax action per state over the available actions; ties go to the lowest index."""
    return np.argmax(np.where(mask, logits, -np.inf), axis=1)


def _sample_rows(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.sum(cum < u[:, None], axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def evaluate_greedy(mdp: FiniteMdp, actions: np.ndarray, episodes: int, max_len: int, rng) -> tuple[float, float]:
    """Mean and standard error of the undiscounted return of a deterministic policy."""
    cum_p = np.cumsum(mdp.transition, axis=2)
    s = _sample_rows(np.cumsum(mdp.initial_dist)[None, :].repeat(episodes, 0), rng.random(episodes))
    ret = np.zeros(episodes)
    alive = ~mdp.terminal[s]
    for _ in range(max_len):
        if not alive.any():
            break
        a = actions[s]
        ret += np.where(alive, mdp.reward[s, a], 0.0)
        s2 = _sample_rows(cum_p[s, a], rng.random(episodes))
        s = np.where(alive, s2, s)
        alive &= ~mdp.terminal[s]
    se = float(ret.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return float(ret.mean()), se


def _apply(agent: AgentState, grads: dict, g_logits: np.ndarray, lr: float) -> None:
    agent.V -= lr * grads["V"]
    agent.A -= lr * grads["A"]
    agent.B -= lr * grads["B"]
    agent.logits -= lr * g_logits


def train(mdp: FiniteMdp, config: TrainConfig) -> tuple[AgentState, LearningCurve]:
    """Run the actor-critic loop; deterministic given ``config.seed``."""
    agent = init_agent(mdp, config)
    rng_act = np.random.default_rng([config.seed, 1])
    rng_batch = np.random.default_rng([config.seed, 2])
    cum_p = np.cumsum(mdp.transition, axis=2)
    cum_rho = np.cumsum(mdp.initial_dist)
    r_max = float(np.abs(mdp.reward).max())
    horizon = 1.0 / (1.0 - config.gamma) if config.gamma < 1.0 else float(config.max_episode_len)
    bound = max(r_max, 1.0) * horizon * 10.0
    curve = LearningCurve()

    N = config.num_actors
    state = _sample_rows(cum_rho[None, :].repeat(N, 0), rng_act.random(N))
    ep_len = np.zeros(N, dtype=int)
    segs: list[list] = [[] for _ in range(N)]
    n_evals = 0

    while agent.steps < config.total_steps:
        pi = agent.policy()
        a = _sample_rows(np.cumsum(pi[state], axis=1), rng_act.random(N))
        s2 = _sample_rows(cum_p[state, a], rng_act.random(N))
        for i in range(N):
            s_i, a_i, n_i = int(state[i]), int(a[i]), int(s2[i])
            segs[i].append((s_i, a_i, float(mdp.reward[s_i, a_i])))
            agent.counts[s_i, a_i, n_i] += 1.0
            ep_len[i] += 1
            done = bool(mdp.terminal[n_i])
            cut = ep_len[i] >= config.max_episode_len
            if done or cut or len(segs[i]) == config.n:
                agent.buffer.push(Trajectory(tuple(segs[i]), n_i, truncated=not done))
                segs[i] = []
            if done or cut:
                n_i = int(_sample_rows(cum_rho[None, :], rng_act.random(1))[0])
                ep_len[i] = 0
            state[i] = n_i
            agent.steps += 1
            if agent.steps >= config.initial_steps and agent.steps % config.steps_per_update == 0:
                _update(agent, mdp, config, rng_batch, bound)
            if agent.steps % config.eval_interval == 0:
                n_evals += 1
                rng_eval = np.random.default_rng([config.seed, 3, n_evals])
                greedy = greedy_policy(agent.logits, agent.mask)
                mean, se = evaluate_greedy(mdp, greedy, config.eval_episodes, config.max_episode_len, rng_eval)
                curve.append(agent.steps, mean, se)
            if agent.steps >= config.total_steps:
                break
    return agent, curve


def _update(agent: AgentState, mdp: FiniteMdp, config: TrainConfig, rng, bound: float) -> None:
    if agent.buffer.num_steps == 0:
        return
    segments = agent.buffer.sample(rng, config.batch_size)
    batch = make_batch(segments, config.n)
    probs = _model_probs(agent, mdp, config.transition_model_kind)
    _, grads = critic_loss(batch, agent, config, probs)
    _, g_logits = actor_loss(batch.s[:, 0], batch.a[:, 0], agent, config)
    frac = min(agent.steps / config.total_steps, 1.0)
    _apply(agent, grads, g_logits, config.learning_rate * (1.0 - frac))
    ema_update(agent, config.tau)
    worst = float(np.abs(agent.V).max())
    if not np.isfinite(worst) or worst > bound:
        raise DivergenceError(
            f"value table diverged (|V| = {worst:.3g} > {bound:.3g}) at step {agent.steps}, "
            f"method {config.method}, seed {config.seed}"
        )
