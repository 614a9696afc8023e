"""Finite MDPs, policies, trajectories, and exact dynamic-programming oracles.

States and actions are integer indices.  Terminal states self-loop with
probability one and zero reward, so ``V(terminal) = 0`` and finite episodic
returns coincide with the infinite-horizon sums.

Some states expose fewer actions than ``num_actions``; ``action_mask`` marks
the available ones.  Unavailable actions still carry a valid transition row
(constructors copy action 0) so every formula stays well defined, but
policies must give them zero probability.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, EvaluationError, SupportError

__all__ = [
    "FiniteMdp",
    "PolicyTable",
    "Trajectory",
    "Dataset",
    "NatureTable",
    "sample_trajectory",
    "sample_dataset",
    "discounted_return",
    "policy_evaluation_exact",
    "q_values_exact",
    "advantage_exact",
    "nature_advantage_exact",
    "policy_transition_matrix",
    "check_policy",
]

_NORM_TOL = 1e-12


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _trap_states(transition: np.ndarray, terminal: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Non-terminal states from which some policy can avoid termination forever.

    Iteratively discard states where every available action leaks probability
    outside the candidate set; what survives is closed under some action.
    """
    alive = ~terminal.copy()
    while True:
        leaks = (transition * ~alive[None, None, :]).sum(axis=2) > 0  # (S, A)
        can_stay = (~leaks & mask).any(axis=1)
        keep = alive & can_stay
        if np.array_equal(keep, alive):
            return alive
        alive = keep


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray
    terminal: np.ndarray
    action_mask: np.ndarray | None = None
    name: str = ""

    def __post_init__(self) -> None:
        p = _frozen(self.transition)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] < 1 or p.shape[1] < 1:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {p.shape}")
        S, A, _ = p.shape
        r = _frozen(self.reward)
        if r.shape != (S, A):
            raise ConfigurationError(f"reward must have shape {(S, A)}, got {r.shape}")
        rho = _frozen(self.initial_dist)
        if rho.shape != (S,):
            raise ConfigurationError(f"initial_dist must have shape {(S,)}, got {rho.shape}")
        term = _frozen(self.terminal, dtype=bool)
        if term.shape != (S,):
            raise ConfigurationError(f"terminal must have shape {(S,)}, got {term.shape}")
        mask = np.ones((S, A), dtype=bool) if self.action_mask is None else np.array(self.action_mask, dtype=bool)
        if mask.shape != (S, A):
            raise ConfigurationError(f"action_mask must have shape {(S, A)}, got {mask.shape}")
        mask = _frozen(mask, dtype=bool)
        gamma = float(self.discount)

        if not 0.0 <= gamma <= 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1], got {gamma}")
        if np.any(p < 0) or np.any(p > 1):
            raise ConfigurationError("transition probabilities must lie in [0, 1]")
        row_sums = p.sum(axis=2)
        bad = np.argwhere(np.abs(row_sums - 1.0) > _NORM_TOL)
        if len(bad):
            s, a = bad[0]
            raise ConfigurationError(f"transition row ({s}, {a}) sums to {row_sums[s, a]!r}")
        if not mask.any(axis=1).all():
            raise ConfigurationError("every state needs at least one available action")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > _NORM_TOL:
            raise ConfigurationError("initial_dist must be a probability vector")
        if np.any(rho[term] > 0):
            raise ConfigurationError("initial_dist assigns mass to a terminal state")
        for s in np.flatnonzero(term):
            if not np.all(p[s, :, s] == 1.0) or np.any(r[s] != 0.0):
                raise ConfigurationError(f"terminal state {s} must self-loop with zero reward")
        if gamma == 1.0:
            trap = _trap_states(p, term, mask)
            if trap.any():
                raise ConfigurationError(
                    f"discount is 1 but states {np.flatnonzero(trap).tolist()} admit a non-terminating policy"
                )

        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "action_mask", mask)
        object.__setattr__(self, "discount", gamma)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    def horizon(self) -> int | None:
        """Longest possible episode length, or None if episodes can be unbounded."""
        S = self.num_states
        succ = (self.transition > 0) & self.action_mask[:, :, None]
        succ = succ.any(axis=1)  # (S, S)
        nonterm = ~self.terminal
        depth = np.zeros(S, dtype=int)
        # longest path to a terminal over the DAG of non-terminal states
        for _ in range(S + 1):
            new = np.zeros(S, dtype=int)
            for s in np.flatnonzero(nonterm):
                nxt = np.flatnonzero(succ[s])
                new[s] = 1 + max((depth[t] if nonterm[t] else 0) for t in nxt)
            if np.array_equal(new, depth):
                return int(depth[self.initial_dist > 0].max(initial=0))
            depth = new
        return None

    def with_discount(self, discount: float) -> "FiniteMdp":
        return FiniteMdp(
            self.transition, self.reward, discount, self.initial_dist, self.terminal, self.action_mask, self.name
        )


@dataclass(frozen=True, eq=False)
class PolicyTable:
    probs: np.ndarray

    def __post_init__(self) -> None:
        pi = _frozen(self.probs)
        if pi.ndim != 2:
            raise ConfigurationError(f"policy must be a 2-d table, got shape {pi.shape}")
        if np.any(pi < 0):
            raise ConfigurationError("policy has negative probabilities")
        sums = pi.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _NORM_TOL):
            raise ConfigurationError(f"policy rows must sum to 1, got {sums.tolist()}")
        object.__setattr__(self, "probs", pi)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    @classmethod
    def uniform(cls, mdp: FiniteMdp) -> "PolicyTable":
        mask = mdp.action_mask.astype(float)
        return cls(mask / mask.sum(axis=1, keepdims=True))

    @classmethod
    def from_logits(cls, logits: np.ndarray, mask: np.ndarray | None = None) -> "PolicyTable":
        return cls(softmax(logits, mask))

    @classmethod
    def deterministic(cls, actions: Sequence[int], num_actions: int) -> "PolicyTable":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    z = np.array(logits, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def check_policy(mdp: FiniteMdp, policy: PolicyTable) -> None:
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise ConfigurationError(
            f"policy shape {policy.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})"
        )
    if np.any(policy.probs[~mdp.action_mask] > 0):
        raise ConfigurationError("policy puts mass on unavailable actions")


@dataclass(frozen=True)
class Trajectory:
    """An episode (or episode fragment).

    ``steps`` holds ``(state, action, reward)`` triples; the state after the
    last step is ``final_state``.  ``truncated`` is True when the sequence was
    cut before reaching a terminal state.
    """

    steps: tuple[tuple[int, int, float], ...]
    final_state: int
    truncated: bool = False

    def __post_init__(self) -> None:
        steps = tuple((int(s), int(a), float(r)) for s, a, r in self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "final_state", int(self.final_state))
        object.__setattr__(self, "truncated", bool(self.truncated))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> list[int]:
        return [s for s, _, _ in self.steps]

    @property
    def actions(self) -> list[int]:
        return [a for _, a, _ in self.steps]

    @property
    def rewards(self) -> list[float]:
        return [r for _, _, r in self.steps]

    @property
    def start_state(self) -> int:
        return self.steps[0][0] if self.steps else self.final_state

    def next_states(self) -> list[int]:
        return self.states[1:] + [self.final_state]

    def transitions(self) -> Iterator[tuple[int, int, float, int]]:
        for (s, a, r), s2 in zip(self.steps, self.next_states()):
            yield s, a, r, s2


@dataclass(frozen=True)
class Dataset:
    """Sampled episodes, optionally with multiplicities or probability weights.

    The behavior policy is deliberately not recorded.
    """

    trajectories: tuple[Trajectory, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(trajs):
                raise ConfigurationError("weights must match the number of trajectories")
            if any(x < 0 for x in w):
                raise ConfigurationError("weights must be non-negative")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[tuple[Trajectory, float]]:
        weights = self.weights if self.weights is not None else (1.0,) * len(self.trajectories)
        return iter(zip(self.trajectories, weights))

    def max_index(self) -> tuple[int, int]:
        """Largest state and action index seen, plus one."""
        S = A = 0
        for traj in self.trajectories:
            S = max([S, traj.final_state + 1] + [s + 1 for s in traj.states])
            A = max([A] + [a + 1 for a in traj.actions])
        return S, A


class NatureTable:
    """Values over ``(s, a, s')`` defined only on a transition support.

    Reading an entry off the support raises :class:`SupportError`.
    """

    def __init__(self, values: np.ndarray, support: np.ndarray):
        values = np.array(values, dtype=float)
        support = np.array(support, dtype=bool)
        if values.shape != support.shape or values.ndim != 3:
            raise ConfigurationError("values and support must share an (S, A, S) shape")
        values[~support] = 0.0
        values.setflags(write=False)
        support.setflags(write=False)
        self._values = values
        self.support = support

    @classmethod
    def zeros(cls, support: np.ndarray) -> "NatureTable":
        return cls(np.zeros(np.shape(support)), support)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._values.shape

    def __getitem__(self, key: tuple[int, int, int]) -> float:
        s, a, s2 = key
        if not self.support[s, a, s2]:
            raise SupportError(f"B({s}, {a}, {s2}) is outside the transition support")
        return float(self._values[s, a, s2])

    def get(self, s: int, a: int, s2: int) -> float:
        return self[s, a, s2]

    def dense(self, fill: float = np.nan) -> np.ndarray:
        out = self._values.copy()
        out[~self.support] = fill
        return out

    def on_support(self) -> np.ndarray:
        """Dense array with zeros off the support (safe for weighted sums)."""
        return self._values.copy()

    def items(self) -> Iterator[tuple[tuple[int, int, int], float]]:
        for idx in zip(*np.nonzero(self.support)):
            yield tuple(int(i) for i in idx), float(self._values[idx])

    def __repr__(self) -> str:
        return f"NatureTable(shape={self.shape}, support={int(self.support.sum())})"


def sample_trajectory(mdp: FiniteMdp, policy: PolicyTable, rng_seed, max_len: int) -> Trajectory:
    """Roll out one episode; deterministic given ``rng_seed``.

    ``rng_seed`` may be anything accepted by :func:`numpy.random.default_rng`,
    including an existing Generator (which is then advanced).
    """
    check_policy(mdp, policy)
    if max_len < 1:
        raise ConfigurationError("max_len must be at least 1")
    rng = np.random.default_rng(rng_seed)
    S = mdp.num_states
    s = int(rng.choice(S, p=mdp.initial_dist))
    steps = []
    for _ in range(max_len):
        a = int(rng.choice(mdp.num_actions, p=policy.probs[s]))
        s2 = int(rng.choice(S, p=mdp.transition[s, a]))
        steps.append((s, a, float(mdp.reward[s, a])))
        s = s2
        if mdp.terminal[s]:
            return Trajectory(tuple(steps), s, truncated=False)
    return Trajectory(tuple(steps), s, truncated=True)


def sample_dataset(
    mdp: FiniteMdp, policy: PolicyTable, num_trajectories: int, rng_seed, max_len: int = 1000
) -> Dataset:
    rng = np.random.default_rng(rng_seed)
    return Dataset(tuple(sample_trajectory(mdp, policy, rng, max_len) for _ in range(num_trajectories)))


def discounted_return(traj: Trajectory, gamma: float) -> float:
    g = 0.0
    for r in reversed(traj.rewards):
        g = r + gamma * g
    return g


def policy_transition_matrix(mdp: FiniteMdp, policy: PolicyTable) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state matrix and expected reward under ``policy``."""
    pi = policy.probs
    P = np.einsum("sa,sat->st", pi, mdp.transition)
    r = np.einsum("sa,sa->s", pi, mdp.reward)
    return P, r


def _reaches_terminal(P: np.ndarray, terminal: np.ndarray) -> np.ndarray:
    reach = terminal.copy()
    while True:
        new = reach | ((P > 0) & reach[None, :]).any(axis=1)
        if np.array_equal(new, reach):
            return reach
        reach = new


def policy_evaluation_exact(mdp: FiniteMdp, policy: PolicyTable) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = r_pi`` directly, with ``V(terminal) = 0``."""
    check_policy(mdp, policy)
    P, r = policy_transition_matrix(mdp, policy)
    nt = ~mdp.terminal
    if mdp.discount == 1.0:
        stuck = ~_reaches_terminal(P, mdp.terminal)
        if stuck.any():
            raise EvaluationError(
                f"policy never terminates from states {np.flatnonzero(stuck).tolist()} with discount 1"
            )
    M = np.eye(int(nt.sum())) - mdp.discount * P[np.ix_(nt, nt)]
    V = np.zeros(mdp.num_states)
    try:
        V[nt] = np.linalg.solve(M, r[nt])
    except np.linalg.LinAlgError as exc:
        raise EvaluationError(f"singular Bellman system: {exc}") from exc
    return V


def q_values_exact(mdp: FiniteMdp, policy: PolicyTable, V: np.ndarray | None = None) -> np.ndarray:
    if V is None:
        V = policy_evaluation_exact(mdp, policy)
    return mdp.reward + mdp.discount * mdp.transition @ V


def advantage_exact(mdp: FiniteMdp, policy: PolicyTable) -> np.ndarray:
    V = policy_evaluation_exact(mdp, policy)
    return q_values_exact(mdp, policy, V) - V[:, None]


def nature_advantage_exact(mdp: FiniteMdp, policy: PolicyTable) -> NatureTable:
    """``B(s, a, s') = V(s') - E[V(s'') | s, a]`` on the support ``p(s'|s,a) > 0``."""
    V = policy_evaluation_exact(mdp, policy)
    expected = mdp.transition @ V
    values = V[None, None, :] - expected[:, :, None]
    support = (mdp.transition > 0) & ~mdp.terminal[:, None, None] & mdp.action_mask[:, :, None]
    if mdp.is_deterministic:
        values = np.zeros_like(values)
    return NatureTable(values, support)
