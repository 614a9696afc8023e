"""Regression designs for the DAE family.

Every estimator in :mod:`offdae.estimators` is a weighted least-squares fit of
the window identity

    V(s_0) + sum_k g^k A(s_k, a_k) + sum_k g^(k+1) B(s_k, a_k, s_(k+1)) - g^L V(s_L)
        = sum_k g^k r_k

over a collection of windows.  A :class:`WindowDesign` stores, per window,
the coefficient rows of that identity split by table (``zV``, ``zA``,
``zB``), the bootstrap coefficient ``zE`` (``g^L`` at the end state, zero when
the window ends in a terminal state), the reward sum ``y`` and a weight.

Designs come from three places:

* :func:`design_from_dataset` expands sampled trajectories into windows;
* :func:`enumerate_windows` lists every window with its probability under a
  behavior policy (exhaustive, exponential in the window length);
* :func:`population_design` builds rows with the same second moments as the
  exhaustive enumeration, but from martingale increments of the conditional
  expectation of the features.  Its row count is linear in the window length
  and it also covers unbounded episodes exactly.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .mdp import Dataset, FiniteMdp, PolicyTable, Trajectory, check_policy

__all__ = [
    "WindowDesign",
    "design_from_dataset",
    "design_from_windows",
    "expand_windows",
    "trajectory_windows",
    "enumerate_windows",
    "episode_distribution",
    "population_design",
    "occupancy",
]


@dataclass(frozen=True, eq=False)
class WindowDesign:
    num_states: int
    num_actions: int
    gamma: float
    n: int | None
    zV: np.ndarray
    zA: np.ndarray
    zB: np.ndarray
    zE: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    v_start: np.ndarray
    v_end: np.ndarray
    visited: np.ndarray
    pairs: np.ndarray
    transitions: np.ndarray

    @property
    def num_rows(self) -> int:
        return len(self.y)

    def gram(self, include_b: bool = True) -> np.ndarray:
        """Weighted second-moment matrix of the stacked coefficient rows."""
        parts = [self.zV, self.zA] + ([self.zB] if include_b else []) + [self.zE]
        Z = np.hstack(parts)
        return (Z * self.weight[:, None]).T @ Z


def _window_end(traj: Trajectory, start: int, length: int | None):
    """Steps of the window starting at ``start`` and whether it ends in a terminal."""
    T = len(traj.steps)
    stop = T if length is None else min(T, start + length)
    steps = traj.steps[start:stop]
    if stop < T:
        return steps, traj.steps[stop][0], False
    return steps, traj.final_state, not traj.truncated


def trajectory_windows(traj: Trajectory, n: int | None):
    """Yield the windows of one trajectory as Trajectory objects.

    ``truncated`` on a window means it ends in a non-terminal state.
    """
    starts = [0] if n is None else range(len(traj.steps))
    for t in starts:
        steps, end, end_terminal = _window_end(traj, t, None if n is None else n + 1)
        yield Trajectory(steps, end, not end_terminal)


def expand_windows(data: Dataset, n: int | None) -> dict[tuple, float]:
    """Collapse a dataset into unique windows with accumulated weight.

    ``n=None`` yields one window per trajectory; a finite ``n`` yields one
    window of up to ``n + 1`` transitions starting at every step.  Keys are
    ``(steps, end_state, end_is_terminal)``.
    """
    if n is not None and n < 0:
        raise ConfigurationError("backup length must be non-negative")
    windows: dict[tuple, float] = defaultdict(float)
    for traj, w in data:
        if w == 0 or not traj.steps:
            continue
        starts = [0] if n is None else range(len(traj.steps))
        length = None if n is None else n + 1
        for t in starts:
            steps, end, end_terminal = _window_end(traj, t, length)
            windows[(steps, end, end_terminal)] += w
    return dict(windows)


def design_from_windows(
    windows: dict[tuple, float], num_states: int, num_actions: int, gamma: float, n: int | None
) -> WindowDesign:
    S, A = num_states, num_actions
    m = len(windows)
    zV = np.zeros((m, S))
    zA = np.zeros((m, S * A))
    zB = np.zeros((m, S * A * S))
    zE = np.zeros((m, S))
    y = np.zeros(m)
    weight = np.zeros(m)
    v_start = np.zeros(S, dtype=bool)
    v_end = np.zeros(S, dtype=bool)
    visited = np.zeros(S, dtype=bool)
    pairs = np.zeros((S, A), dtype=bool)
    transitions = np.zeros((S, A, S), dtype=bool)
    for i, ((steps, end, end_terminal), w) in enumerate(sorted(windows.items())):
        weight[i] = w
        s0 = steps[0][0]
        if not (0 <= s0 < S and 0 <= end < S):
            raise ConfigurationError(f"state index out of range in window starting at {s0}")
        zV[i, s0] = 1.0
        v_start[s0] = True
        disc = 1.0
        for k, (s, a, r) in enumerate(steps):
            if not 0 <= a < A:
                raise ConfigurationError(f"action index {a} out of range")
            s2 = steps[k + 1][0] if k + 1 < len(steps) else end
            zA[i, s * A + a] += disc
            zB[i, (s * A + a) * S + s2] += gamma * disc
            y[i] += disc * r
            visited[s] = True
            pairs[s, a] = True
            transitions[s, a, s2] = True
            disc *= gamma
        if not end_terminal:
            zE[i, end] = disc
            v_end[end] = True
    return WindowDesign(
        S, A, float(gamma), n, zV, zA, zB, zE, y, weight, v_start, v_end, visited, pairs, transitions
    )


def design_from_dataset(
    data: Dataset, gamma: float, n: int | None, num_states: int | None = None, num_actions: int | None = None
) -> WindowDesign:
    if len(data) == 0:
        raise ConfigurationError("dataset is empty")
    S_seen, A_seen = data.max_index()
    S = S_seen if num_states is None else num_states
    A = A_seen if num_actions is None else num_actions
    if S < S_seen or A < A_seen:
        raise ConfigurationError("dataset indices exceed the given table sizes")
    return design_from_windows(expand_windows(data, n), S, A, gamma, n)


def episode_distribution(mdp: FiniteMdp, policy: PolicyTable, max_len: int | None = None):
    """Every complete episode with its probability, for MDPs with a finite horizon.

    Returns a list of ``(trajectory, probability)`` pairs sorted by trajectory.
    """
    check_policy(mdp, policy)
    horizon = mdp.horizon()
    if horizon is None and max_len is None:
        raise ConfigurationError("episodes are unbounded; pass max_len or use population_design")
    limit = horizon if max_len is None else max_len
    out: list[tuple[Trajectory, float]] = []

    def grow(steps, s, prob):
        if mdp.terminal[s]:
            out.append((Trajectory(tuple(steps), s, False), prob))
            return
        if len(steps) >= limit:
            out.append((Trajectory(tuple(steps), s, True), prob))
            return
        for a in np.flatnonzero(policy.probs[s] > 0):
            for s2 in np.flatnonzero(mdp.transition[s, a] > 0):
                grow(
                    steps + [(s, int(a), float(mdp.reward[s, a]))],
                    int(s2),
                    prob * policy.probs[s, a] * mdp.transition[s, a, s2],
                )

    for s0 in np.flatnonzero(mdp.initial_dist > 0):
        grow([], int(s0), float(mdp.initial_dist[s0]))
    out.sort(key=lambda item: (item[0].steps, item[0].final_state))
    return out


def occupancy(mdp: FiniteMdp, policy: PolicyTable, discount: float = 1.0) -> np.ndarray:
    """Expected (discounted) number of visits to each non-terminal state per episode."""
    P = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    nt = ~mdp.terminal
    M = np.eye(int(nt.sum())) - discount * P[np.ix_(nt, nt)].T
    d = np.zeros(mdp.num_states)
    try:
        d[nt] = np.linalg.solve(M, mdp.initial_dist[nt])
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("behavior policy does not terminate") from exc
    return np.clip(d, 0.0, None)


def enumerate_windows(mdp: FiniteMdp, behavior: PolicyTable, n: int | None) -> dict[tuple, float]:
    """Exhaustive window enumeration with probability weights.

    For ``n=None`` the windows are complete episodes from the start
    distribution (finite-horizon MDPs only).  For finite ``n``, windows of up
    to ``n + 1`` transitions start at every state, weighted by the expected
    number of visits under ``behavior``.
    """
    if n is None:
        episodes = episode_distribution(mdp, behavior)
        windows: dict[tuple, float] = defaultdict(float)
        for traj, prob in episodes:
            windows[(traj.steps, traj.final_state, not traj.truncated)] += prob
        return dict(windows)
    check_policy(mdp, behavior)
    d = occupancy(mdp, behavior)
    windows = defaultdict(float)
    mu, p = behavior.probs, mdp.transition

    def grow(steps, s, prob):
        if mdp.terminal[s]:
            windows[(tuple(steps), s, True)] += prob
            return
        if len(steps) == n + 1:
            windows[(tuple(steps), s, False)] += prob
            return
        for a in np.flatnonzero(mu[s] > 0):
            for s2 in np.flatnonzero(p[s, a] > 0):
                grow(steps + [(s, int(a), float(mdp.reward[s, a]))], int(s2), prob * mu[s, a] * p[s, a, s2])

    for s0 in np.flatnonzero(d > 0):
        grow([], int(s0), float(d[s0]))
    return dict(windows)


def population_design(mdp: FiniteMdp, behavior: PolicyTable, n: int | None) -> WindowDesign:
    """Exact population design from martingale increments.

    The coefficient vector ``u`` of a random window is written as
    ``E[u | s_0]`` plus, for every position ``k``, the change in the
    conditional expectation caused by the action draw and by the transition
    draw.  These increments are uncorrelated, so the rows below reproduce
    ``E[u u^T]`` of the exhaustive enumeration exactly, and because rewards
    are a function of ``(s, a)`` the reward sum is ``u`` dotted with the reward
    table.  Weighted least squares on these rows therefore has the same
    minimizers and rank as the population objective.
    """
    check_policy(mdp, behavior)
    S, A = mdp.num_states, mdp.num_actions
    g = mdp.discount
    mu, p = behavior.probs, mdp.transition
    nt = ~mdp.terminal
    SA, SAS = S * A, S * A * S
    D = SA + SAS + S  # A, B, E blocks of the per-window feature vector
    offB, offE = SA, SA + SAS

    # immediate part of G(s, a): e_A(s, a) + g * sum_s' p(s'|s,a) e_B(s, a, s')
    G0 = np.zeros((SA, D))
    G0[np.arange(SA), np.arange(SA)] = 1.0
    pr = p.reshape(SA, S) * nt.reshape(S, 1)[np.repeat(np.arange(S), A)]
    rows = np.repeat(np.arange(SA), S)
    G0[rows, offB + np.arange(SAS)] = g * pr.reshape(-1)
    mu_nt = mu * nt[:, None]
    P_mu = np.einsum("sa,sat->st", mu_nt, p) * nt[None, :]

    def nature_rows(F_next: np.ndarray, scale: np.ndarray, k_disc: float, out):
        # for each (s, a, s'): g * k_disc * [(e_B(s,a,s') + F(s')) - sum_s'' p (e_B + F(s''))]
        for s in np.flatnonzero(scale.sum(axis=1) > 0):
            for a in np.flatnonzero(scale[s] > 0):
                sa = s * A + a
                succ = np.flatnonzero(p[s, a] > 0)
                vecs = np.zeros((len(succ), D))
                vecs[np.arange(len(succ)), offB + sa * S + succ] = 1.0
                vecs += F_next[succ]
                mean = p[s, a, succ] @ vecs
                for j, s2 in enumerate(succ):
                    out.append((g * k_disc * (vecs[j] - mean), scale[s, a] * p[s, a, s2]))

    def action_rows(G: np.ndarray, F: np.ndarray, scale: np.ndarray, k_disc: float, out):
        for s in np.flatnonzero(scale.sum(axis=1) > 0):
            for a in np.flatnonzero(scale[s] > 0):
                out.append((k_disc * (G[s * A + a] - F[s]), scale[s, a]))

    collected: list[tuple[np.ndarray, float]] = []
    start_rows: list[tuple[int, np.ndarray, float]] = []
    visited = np.zeros(S, dtype=bool)
    v_end = np.zeros(S, dtype=bool)

    if n is None:
        # stationary expected features F = (I - g P_mu)^-1 sum_a mu G0
        M = np.eye(S) - g * P_mu
        rhs = np.einsum("sa,sad->sd", mu_nt, G0.reshape(S, A, D))
        try:
            F = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise EvaluationError("behavior policy does not terminate") from exc
        F[~nt] = 0.0
        G = G0 + g * (p.reshape(SA, S) * nt[None, :]) @ F
        d2 = np.linalg.solve((np.eye(S) - g * g * P_mu).T, mdp.initial_dist * nt)
        d2 = np.clip(d2, 0.0, None) * nt
        visited = _reachable(mdp, behavior, mdp.initial_dist > 0)
        d2 = np.where(visited, d2, 0.0)
        for s in np.flatnonzero(mdp.initial_dist > 0):
            start_rows.append((s, F[s], float(mdp.initial_dist[s])))
        scale = d2[:, None] * mu_nt
        action_rows(G, F, scale, 1.0, collected)
        nature_rows(F, scale, 1.0, collected)
    else:
        if n < 0:
            raise ConfigurationError("backup length must be non-negative")
        d = occupancy(mdp, behavior)
        # F_j for j = 0 .. n+1 remaining transitions
        Fs = [np.zeros((S, D))]
        Fs[0][np.flatnonzero(nt), offE + np.flatnonzero(nt)] = 1.0
        Gs = [None]
        for j in range(1, n + 2):
            Gj = G0 + g * (p.reshape(SA, S) * nt[None, :]) @ Fs[j - 1]
            Fj = np.einsum("sa,sad->sd", mu_nt, Gj.reshape(S, A, D))
            Gs.append(Gj)
            Fs.append(Fj)
        for s in np.flatnonzero(d > 0):
            start_rows.append((s, Fs[n + 1][s], float(d[s])))
        q = d * nt
        for k in range(n + 1):
            j = n + 1 - k
            visited |= q > 0
            scale = q[:, None] * mu_nt
            action_rows(Gs[j], Fs[j], scale, g**k, collected)
            nature_rows(Fs[j - 1], scale, g**k, collected)
            q = (q @ P_mu) * nt
        v_end = q > 0

    m = len(start_rows) + len(collected)
    zV = np.zeros((m, S))
    body = np.zeros((m, D))
    weight = np.zeros(m)
    for i, (s, vec, w) in enumerate(start_rows):
        zV[i, s] = 1.0
        body[i] = vec
        weight[i] = w
    for i, (vec, w) in enumerate(collected, start=len(start_rows)):
        body[i] = vec
        weight[i] = w
    keep = weight > 0
    zV, body, weight = zV[keep], body[keep], weight[keep]
    zA, zB, zE = body[:, :SA], body[:, offB:offE], body[:, offE:]
    y = zA @ mdp.reward.reshape(-1)
    v_start = np.zeros(S, dtype=bool)
    v_start[[s for s, _, _ in start_rows]] = True
    pairs = visited[:, None] & (mu > 0)
    transitions = pairs[:, :, None] & (p > 0)
    return WindowDesign(S, A, g, n, zV, zA, zB, zE, y, weight, v_start, v_end & nt, visited & nt, pairs, transitions)


def _reachable(mdp: FiniteMdp, policy: PolicyTable, start: np.ndarray) -> np.ndarray:
    step = (np.einsum("sa,sat->st", policy.probs, mdp.transition) > 0) & ~mdp.terminal[:, None]
    seen = start & ~mdp.terminal
    while True:
        new = seen | (step & seen[:, None]).any(axis=0)
        new &= ~mdp.terminal
        if np.array_equal(new, seen):
            return seen
        seen = new
