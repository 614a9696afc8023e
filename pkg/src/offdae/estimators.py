"""Return estimators posed as regressions over trajectory features.

MC and batch TD(0) give value tables.  DAE and Off-policy DAE solve a
weighted least-squares problem over windows (see :mod:`offdae.design`) with
the centering constraints built into the parametrization.  At every state
the last action with positive target probability is the reference action;
its advantage is solved from the constraint

    A(s, ref) = -sum_{a != ref} pi(a|s) A(s, a) / pi(ref|s)

and the remaining entries are free.  B is handled the same way per
``(s, a)`` row with the last successor as reference.  The unconstrained
problem is solved with a minimum-norm pseudoinverse over the free entries.
Entries the data says nothing about are reported as NaN.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import WindowDesign, design_from_dataset
from .errors import ConfigurationError, FitError
from .mdp import Dataset, FiniteMdp, NatureTable, PolicyTable, Trajectory

__all__ = [
    "DecompositionTables",
    "FitReport",
    "TransitionModel",
    "build_features",
    "fit_mc",
    "fit_batch_td0",
    "fit_dae",
    "fit_offpolicy_dae",
    "estimate_transitions",
    "uncorrected_target",
    "tree_backup_target",
    "critic_target_hierarchy",
    "RCOND",
]

RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class DecompositionTables:
    """Value, advantage and nature-advantage tables.

    ``V`` and ``A`` hold NaN where no estimate exists.  ``B`` may be None for
    methods that do not model transitions.
    """

    V: np.ndarray
    A: np.ndarray
    B: NatureTable | None = None

    def constraint_violation(self, policy: PolicyTable, model: "TransitionModel | None" = None) -> float:
        """Largest centering violation over the entries that are present."""
        worst = 0.0
        A = self.A
        for s in range(A.shape[0]):
            present = ~np.isnan(A[s])
            if present.any():
                worst = max(worst, abs(float(np.sum(policy.probs[s, present] * A[s, present]))))
        if self.B is not None and model is not None:
            B = self.B.on_support()
            rows = self.B.support.any(axis=2)
            sums = np.einsum("sat,sat->sa", model.probs, B)
            if rows.any():
                worst = max(worst, float(np.abs(sums[rows]).max()))
        return worst


@dataclass(frozen=True, eq=False)
class FitReport:
    tables: DecompositionTables
    objective_value: float
    design_rank: int
    num_free: int
    identified_V: np.ndarray | None = None
    identified_A: np.ndarray | None = None

    @property
    def unique(self) -> bool:
        return self.design_rank == self.num_free


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Transition probabilities used to center B.

    ``support`` marks the successors each ``(s, a)`` row is defined over; the
    rows of ``probs`` restricted to the support sum to one.
    """

    kind: str
    probs: np.ndarray
    support: np.ndarray
    pair_counts: np.ndarray | None = None
    transition_counts: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("oracle", "empirical"):
            raise ConfigurationError(f"unknown transition model kind {self.kind!r}")
        rows = self.support.any(axis=2)
        sums = (self.probs * self.support).sum(axis=2)
        if np.any(np.abs(sums[rows] - 1.0) > 1e-12):
            raise ConfigurationError("transition model rows must sum to 1 on their support")

    @classmethod
    def oracle(cls, mdp: FiniteMdp) -> "TransitionModel":
        support = (mdp.transition > 0) & ~mdp.terminal[:, None, None]
        return cls("oracle", np.where(support, mdp.transition, 0.0), support)

    def covers(self, s: int, a: int, s2: int) -> bool:
        return bool(self.support[s, a, s2])


def build_features(traj: Trajectory, gamma: float, mode: str) -> dict[tuple, float]:
    """Sparse feature map of a trajectory.

    ``start-state`` gives ``{("s", s0): 1}``; ``state-action`` gives discounted
    counts keyed ``("sa", s, a)``; ``transition`` gives discounted counts keyed
    ``("sas", s, a, s')``.  Zero entries are dropped.
    """
    if mode == "start-state":
        return {("s", traj.start_state): 1.0}
    if mode not in ("state-action", "transition"):
        raise ConfigurationError(f"unknown feature mode {mode!r}")
    feats: dict[tuple, float] = {}
    disc = 1.0
    for s, a, _, s2 in traj.transitions():
        key = ("sa", s, a) if mode == "state-action" else ("sas", s, a, s2)
        feats[key] = feats.get(key, 0.0) + disc
        disc *= gamma
    return {k: v for k, v in feats.items() if v != 0.0}


def _check_nonempty(data: Dataset) -> None:
    if len(data) == 0 or all(w == 0 for _, w in data):
        raise FitError("dataset is empty")


def fit_mc(data: Dataset, gamma: float, num_states: int | None = None) -> np.ndarray:
    """Mean discounted return per start state; NaN for states never started from."""
    _check_nonempty(data)
    S = data.max_index()[0] if num_states is None else num_states
    total = np.zeros(S)
    count = np.zeros(S)
    for traj, w in data:
        g = 0.0
        for r in reversed(traj.rewards):
            g = r + gamma * g
        total[traj.start_state] += w * g
        count[traj.start_state] += w
    V = np.full(S, np.nan)
    seen = count > 0
    V[seen] = total[seen] / count[seen]
    return V


def fit_batch_td0(data: Dataset, gamma: float, num_states: int | None = None) -> np.ndarray:
    """Fixed point of batch TD(0): exact evaluation of the empirical model.

    Final states of non-truncated trajectories are terminal with value 0.
    States that are neither visited nor terminal are NaN.
    """
    _check_nonempty(data)
    S = data.max_index()[0] if num_states is None else num_states
    count = np.zeros(S)
    reward = np.zeros(S)
    trans = np.zeros((S, S))
    terminal = np.zeros(S, dtype=bool)
    for traj, w in data:
        for s, _, r, s2 in traj.transitions():
            count[s] += w
            reward[s] += w * r
            trans[s, s2] += w
        if not traj.truncated:
            terminal[traj.final_state] = True
    visited = count > 0
    if np.any(visited & terminal):
        bad = np.flatnonzero(visited & terminal).tolist()
        raise FitError(f"states {bad} are both terminal and have outgoing transitions")
    dangling = (trans[visited].sum(axis=0) > 0) & ~visited & ~terminal
    if dangling.any():
        raise FitError(f"states {np.flatnonzero(dangling).tolist()} are reached but have no outgoing data")
    idx = np.flatnonzero(visited)
    P = trans[np.ix_(idx, idx)] / count[idx, None]
    r = reward[idx] / count[idx]
    V = np.full(S, np.nan)
    V[terminal] = 0.0
    M = np.eye(len(idx)) - gamma * P
    if len(idx):
        if np.linalg.matrix_rank(M) < len(idx):
            raise FitError("empirical model is not episodic")
        V[idx] = np.linalg.solve(M, r)
    return V


def estimate_transitions(
    data: Dataset, num_states: int | None = None, num_actions: int | None = None
) -> TransitionModel:
    """Unsmoothed empirical transition model from (weighted) counts."""
    S_seen, A_seen = data.max_index()
    S = S_seen if num_states is None else num_states
    A = A_seen if num_actions is None else num_actions
    counts = np.zeros((S, A, S))
    for traj, w in data:
        for s, a, _, s2 in traj.transitions():
            counts[s, a, s2] += w
    pair = counts.sum(axis=2)
    support = counts > 0
    probs = np.divide(counts, pair[:, :, None], out=np.zeros_like(counts), where=pair[:, :, None] > 0)
    return TransitionModel("empirical", probs, support, pair, counts)


def _as_design(data, gamma, n, num_states, num_actions) -> WindowDesign:
    if isinstance(data, WindowDesign):
        if data.n != n or data.gamma != gamma:
            raise ConfigurationError("design was built for a different discount or backup length")
        return data
    _check_nonempty(data)
    return design_from_dataset(data, gamma, n, num_states, num_actions)


def _solve(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    sw = np.sqrt(w)
    Xw, yw = X * sw[:, None], y * sw
    if Xw.shape[1] == 0:
        return np.zeros(0), np.zeros((0, 0))
    U, sig, Vt = np.linalg.svd(Xw, full_matrices=False)
    if sig.size == 0 or sig[0] == 0.0:
        return np.zeros(X.shape[1]), np.zeros((0, X.shape[1]))
    keep = sig > RCOND * sig[0]
    beta = Vt[keep].T @ ((U[:, keep].T @ yw) / sig[keep])
    return beta, Vt[keep]


def _fit(design: WindowDesign, policy: PolicyTable, model: TransitionModel | None, bootstrap) -> FitReport:
    S, A = design.num_states, design.num_actions
    if policy.shape != (S, A):
        raise ConfigurationError(f"policy shape {policy.shape} does not match tables ({S}, {A})")
    pi = policy.probs
    self_boot = bootstrap is None
    has_end = design.zE.any(axis=1)
    if design.n is None and self_boot and np.any(has_end & (design.weight > 0)):
        raise FitError("truncated trajectories need a bootstrap table when n is unbounded")

    y = design.y.copy()
    if not self_boot:
        boot = np.asarray(bootstrap, dtype=float)
        if boot.shape != (S,):
            raise ConfigurationError(f"bootstrap table must have shape ({S},)")
        needed = design.v_end
        if np.any(np.isnan(boot[needed])):
            raise FitError(f"bootstrap table is missing states {np.flatnonzero(needed & np.isnan(boot)).tolist()}")
        y = y + design.zE @ np.nan_to_num(boot)

    # Free-parameter columns; M maps them to raw V, A, B entries.
    v_states = np.flatnonzero(design.v_start | (design.v_end if self_boot else False))
    actset = ((pi > 0) | design.pairs) & design.visited[:, None]
    raw_V, raw_A = S, S * A
    cols: list[np.ndarray] = []
    for s in v_states:
        col = np.zeros(raw_V + raw_A + S * A * S)
        col[s] = 1.0
        cols.append(col)
    for s in np.flatnonzero(design.visited):
        acts = np.flatnonzero(actset[s])
        ref = np.flatnonzero(actset[s] & (pi[s] > 0))[-1]
        for a in acts[acts != ref]:
            col = np.zeros(raw_V + raw_A + S * A * S)
            col[raw_V + s * A + a] = 1.0
            col[raw_V + s * A + ref] = -pi[s, a] / pi[s, ref]
            cols.append(col)
    succ: dict[tuple[int, int], np.ndarray] = {}
    if model is not None:
        outside = design.transitions & ~model.support
        if outside.any():
            s, a, s2 = (int(i) for i in np.argwhere(outside)[0])
            raise FitError(f"transition ({s}, {a}, {s2}) is outside the transition model support")
        for s, a in zip(*np.nonzero(design.pairs)):
            nxt = np.flatnonzero(model.support[s, a])
            succ[(s, a)] = nxt
            base = raw_V + raw_A + (s * A + a) * S
            ref = nxt[-1]
            for t in nxt[:-1]:
                col = np.zeros(raw_V + raw_A + S * A * S)
                col[base + t] = 1.0
                col[base + ref] = -model.probs[s, a, t] / model.probs[s, a, ref]
                cols.append(col)
    M = np.array(cols).T if cols else np.zeros((raw_V + raw_A + S * A * S, 0))

    zV = design.zV - design.zE if self_boot else design.zV
    X_raw = np.hstack([zV, design.zA, design.zB if model is not None else np.zeros_like(design.zB)])
    X = X_raw @ M
    beta, rowspace = _solve(X, y, design.weight)
    rank = rowspace.shape[0]
    theta = M @ beta
    # an entry is pinned down by the data iff its coefficient row lies in the row space
    off = M - (M @ rowspace.T) @ rowspace
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    pinned = np.abs(off).max(axis=1, initial=0.0) <= 1e-8 * scale
    resid = y - X @ beta
    objective = float(np.sum(design.weight * resid**2) / np.sum(design.weight))

    V = np.full(S, np.nan)
    V[v_states] = theta[v_states]
    Atab = np.full((S, A), np.nan)
    Araw = theta[raw_V : raw_V + raw_A].reshape(S, A)
    Atab[actset] = Araw[actset]
    if model is None:
        B = NatureTable.zeros(design.transitions)
    else:
        Braw = theta[raw_V + raw_A :].reshape(S, A, S)
        support = np.zeros((S, A, S), dtype=bool)
        for (s, a), nxt in succ.items():
            support[s, a, nxt] = True
        B = NatureTable(Braw, support)

    n_free = len(v_states) + int(sum(max(int(actset[s].sum()) - 1, 0) for s in np.flatnonzero(design.visited)))
    n_free += sum(len(nxt) - 1 for nxt in succ.values())
    ident_V = np.zeros(S, dtype=bool)
    ident_V[v_states] = pinned[v_states]
    ident_A = actset & pinned[raw_V : raw_V + raw_A].reshape(S, A)
    return FitReport(DecompositionTables(V, Atab, B), max(objective, 0.0), rank, n_free, ident_V, ident_A)


def fit_dae(
    data,
    target_policy: PolicyTable,
    gamma: float,
    n: int | None = None,
    bootstrap: np.ndarray | None = None,
    num_states: int | None = None,
    num_actions: int | None = None,
) -> FitReport:
    """DAE: fit V and a policy-centered A; the returned B is identically zero.

    ``data`` is a :class:`Dataset` or a prebuilt :class:`WindowDesign`
    (population mode).  ``n=None`` uses whole trajectories; a finite ``n``
    uses every window of up to ``n + 1`` transitions.  Without ``bootstrap``
    the value at a window's end is the fitted V itself.
    """
    S, A = target_policy.shape
    design = _as_design(data, gamma, n, num_states or S, num_actions or A)
    return _fit(design, target_policy, None, bootstrap)


def fit_offpolicy_dae(
    data,
    target_policy: PolicyTable,
    model: TransitionModel,
    gamma: float,
    n: int | None = None,
    bootstrap: np.ndarray | None = None,
    num_states: int | None = None,
    num_actions: int | None = None,
) -> FitReport:
    """Off-policy DAE: fit V, A and B with both centering constraints."""
    S, A = target_policy.shape
    if model.probs.shape != (S, A, S):
        raise ConfigurationError("transition model shape does not match the policy")
    design = _as_design(data, gamma, n, num_states or S, num_actions or A)
    return _fit(design, target_policy, model, bootstrap)


def _cut(window: Trajectory, n: int | None):
    """First ``n + 1`` steps of a window, the state after them, and whether it is terminal."""
    steps = window.steps if n is None else window.steps[: n + 1]
    if len(steps) < len(window.steps):
        return steps, window.steps[len(steps)][0], False
    return steps, window.final_state, not window.truncated


def uncorrected_target(window: Trajectory, bootstrap: np.ndarray, gamma: float, n: int | None) -> float:
    steps, end, end_terminal = _cut(window, n)
    total, disc = 0.0, 1.0
    for _, _, r in steps:
        total += disc * r
        disc *= gamma
    if not end_terminal:
        total += disc * float(bootstrap[end])
    return total


def tree_backup_target(
    window: Trajectory, q_target: np.ndarray, target_policy: PolicyTable, gamma: float, n: int | None
) -> float:
    """Tree-backup target for the first pair of ``window``.

    Off-trajectory actions at each next state are bootstrapped from
    ``q_target`` weighted by the target policy; the taken action recurses.
    """
    steps, end, end_terminal = _cut(window, n)
    if not steps:
        raise ConfigurationError("tree backup needs at least one step")
    pi = target_policy.probs
    # innermost term first
    _, _, r_last = steps[-1]
    value = r_last if end_terminal else r_last + gamma * float(pi[end] @ q_target[end])
    for k in range(len(steps) - 2, -1, -1):
        r = steps[k][2]
        s_next, a_next, _ = steps[k + 1]
        others = float(pi[s_next] @ q_target[s_next]) - pi[s_next, a_next] * q_target[s_next, a_next]
        value = r + gamma * (others + pi[s_next, a_next] * value)
    return value


def critic_target_hierarchy(
    window: Trajectory,
    tables: DecompositionTables | None,
    bootstrap: np.ndarray,
    gamma: float,
    n: int | None,
    method: str,
) -> float:
    """Regression target for V(s_0) under the uncorrected/DAE/Off-policy DAE family."""
    if method not in ("uncorrected", "dae", "offpolicy-dae"):
        raise ConfigurationError(f"unknown method {method!r}")
    target = uncorrected_target(window, bootstrap, gamma, n)
    if method == "uncorrected":
        return target
    if tables is None or tables.A is None:
        raise ConfigurationError(f"method {method!r} needs an advantage table")
    if method == "offpolicy-dae" and tables.B is None:
        raise ConfigurationError("method 'offpolicy-dae' needs a nature-advantage table")
    steps, end, _ = _cut(window, n)
    nexts = [st[0] for st in steps[1:]] + [end]
    disc = 1.0
    for (s, a, _), s2 in zip(steps, nexts):
        target -= disc * float(tables.A[s, a])
        if method == "offpolicy-dae":
            target -= disc * gamma * tables.B[s, a, s2]
        disc *= gamma
    return target
