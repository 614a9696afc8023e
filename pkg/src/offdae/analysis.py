"""Checks of the decomposition identities and of the estimators against exact answers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import design_from_windows, enumerate_windows, population_design, trajectory_windows
from .errors import DomainError
from .estimators import (
    DecompositionTables,
    TransitionModel,
    critic_target_hierarchy,
    fit_offpolicy_dae,
)
from .mdp import (
    Dataset,
    FiniteMdp,
    NatureTable,
    PolicyTable,
    Trajectory,
    advantage_exact,
    check_policy,
    nature_advantage_exact,
    policy_evaluation_exact,
    policy_transition_matrix,
)

__all__ = [
    "ClosedFormBias",
    "RecoveryReport",
    "HierarchyReport",
    "decomposition_residual",
    "counterexample_closed_form",
    "explorative_gaps",
    "verify_theorem1",
    "policy_improvement_check",
    "hierarchy_check",
]


def decomposition_residual(traj: Trajectory, V, A, B, gamma: float) -> float:
    """Return minus the baseline, skill and luck terms.

    For a truncated trajectory the discounted value of the final state is
    added back, which keeps the identity exact for any cut point.
    """
    g = 0.0
    disc = 1.0
    for s, a, r, s2 in traj.transitions():
        g += disc * (r - A[s, a] - gamma * B[s, a, s2])
        disc *= gamma
    if not traj.steps:
        return 0.0
    tail = disc * V[traj.final_state] if traj.truncated else 0.0
    return float(g - V[traj.start_state] + tail)


@dataclass(frozen=True)
class ClosedFormBias:
    v_star: float
    lam: float
    a_star_u: float
    a_star_d: float
    v_pi: float

    @property
    def bias(self) -> float:
        return self.v_star - self.v_pi


def counterexample_closed_form(mu_u: float, pi_u: float) -> ClosedFormBias:
    """Population minimizer of plain DAE on the coin-flip example under behavior ``mu_u``."""
    if not 0.0 < mu_u < 1.0:
        raise DomainError(f"mu_u must lie strictly between 0 and 1, got {mu_u}")
    if not 0.0 <= pi_u <= 1.0:
        raise DomainError(f"pi_u must lie in [0, 1], got {pi_u}")
    mu_d, pi_d = 1.0 - mu_u, 1.0 - pi_u
    v = pi_u / (1.0 + pi_u**2 / mu_u + pi_d**2 / mu_d)
    return ClosedFormBias(
        v_star=v,
        lam=v,
        a_star_u=1.0 - v - v * pi_u / mu_u,
        a_star_d=-v - v * pi_d / mu_d,
        v_pi=pi_u / 2.0,
    )


def explorative_gaps(mdp: FiniteMdp, mu: PolicyTable) -> list[tuple[int, int, int]]:
    """Transitions with positive probability that ``mu`` never produces."""
    check_policy(mdp, mu)
    P, _ = policy_transition_matrix(mdp, mu)
    nt = ~mdp.terminal
    reach = (mdp.initial_dist > 0) & nt
    while True:
        new = (reach | ((P > 0) & reach[:, None]).any(axis=0)) & nt
        if np.array_equal(new, reach):
            break
        reach = new
    possible = (mdp.transition > 0) & mdp.action_mask[:, :, None] & nt[:, None, None]
    taken = reach[:, None, None] & (mu.probs > 0)[:, :, None] & (mdp.transition > 0)
    return [tuple(int(i) for i in idx) for idx in np.argwhere(possible & ~taken)]


@dataclass(frozen=True)
class RecoveryReport:
    max_error_V: float
    max_error_A: float
    max_error_B: float
    unique: bool
    explorative: bool
    unreached: list = field(default_factory=list)
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return (
            self.explorative
            and self.unique
            and max(self.max_error_V, self.max_error_A, self.max_error_B) < self.tol
        )


def _max_abs(diff: np.ndarray) -> float:
    diff = diff[~np.isnan(diff)]
    return float(np.abs(diff).max()) if diff.size else 0.0


def verify_theorem1(
    mdp: FiniteMdp,
    mu: PolicyTable,
    pi: PolicyTable,
    n: int | None,
    tol: float = 1e-8,
    design: str = "population",
    perturb_A: float = 0.0,
) -> RecoveryReport:
    """Fit Off-policy DAE on the exact population of windows and compare with DP.

    ``design="enumerate"`` lists every window explicitly instead of using the
    martingale rows (only feasible for short windows or short episodes).
    ``perturb_A`` shifts the fitted advantages before comparison, as a
    sensitivity check of the harness itself.
    """
    check_policy(mdp, pi)
    unreached = explorative_gaps(mdp, mu)
    if design == "population":
        des = population_design(mdp, mu, n)
    elif design == "enumerate":
        des = design_from_windows(enumerate_windows(mdp, mu, n), mdp.num_states, mdp.num_actions, mdp.discount, n)
    else:
        raise DomainError(f"unknown design {design!r}")
    rep = fit_offpolicy_dae(des, pi, TransitionModel.oracle(mdp), mdp.discount, n)
    V = policy_evaluation_exact(mdp, pi)
    A = advantage_exact(mdp, pi)
    B = nature_advantage_exact(mdp, pi).dense()
    T = rep.tables
    fitted_A = T.A + perturb_A
    return RecoveryReport(
        max_error_V=_max_abs(T.V - V),
        max_error_A=_max_abs(fitted_A - A),
        max_error_B=_max_abs(T.B.dense() - B),
        unique=rep.unique,
        explorative=not unreached,
        unreached=unreached,
        tol=tol,
    )


def policy_improvement_check(mdp: FiniteMdp, mu: PolicyTable, pi: PolicyTable) -> float:
    """Largest gap in ``V_mu = V_pi + E_mu[sum_t g^t A_pi(s_t, a_t)]``, solved exactly."""
    V_mu = policy_evaluation_exact(mdp, mu)
    V_pi = policy_evaluation_exact(mdp, pi)
    A_pi = advantage_exact(mdp, pi)
    P_mu, _ = policy_transition_matrix(mdp, mu)
    nt = ~mdp.terminal
    drift = np.einsum("sa,sa->s", mu.probs, A_pi)
    x = np.zeros(mdp.num_states)
    x[nt] = np.linalg.solve(np.eye(int(nt.sum())) - mdp.discount * P_mu[np.ix_(nt, nt)], drift[nt])
    return float(np.abs(V_mu - V_pi - x).max())


@dataclass(frozen=True)
class HierarchyReport:
    max_dev_without_A: float
    max_dev_without_B: float
    num_windows: int

    @property
    def max_deviation(self) -> float:
        return max(self.max_dev_without_A, self.max_dev_without_B)


def hierarchy_check(
    tables: DecompositionTables,
    dataset: Dataset,
    gamma: float,
    n: int | None,
    bootstrap: np.ndarray | None = None,
) -> HierarchyReport:
    """Check that dropping A reduces DAE to uncorrected and dropping B reduces Off-policy DAE to DAE."""
    S, A = tables.A.shape
    boot = np.zeros(S) if bootstrap is None else np.asarray(bootstrap, dtype=float)
    no_A = DecompositionTables(tables.V, np.zeros((S, A)), tables.B)
    no_B = DecompositionTables(tables.V, tables.A, NatureTable.zeros(np.ones((S, A, S), dtype=bool)))
    dev_a = dev_b = 0.0
    count = 0
    for traj, _ in dataset:
        for window in trajectory_windows(traj, n):
            count += 1
            unc = critic_target_hierarchy(window, None, boot, gamma, n, "uncorrected")
            dae0 = critic_target_hierarchy(window, no_A, boot, gamma, n, "dae")
            dev_a = max(dev_a, abs(dae0 - unc))
            dae = critic_target_hierarchy(window, tables, boot, gamma, n, "dae")
            off0 = critic_target_hierarchy(window, no_B, boot, gamma, n, "offpolicy-dae")
            dev_b = max(dev_b, abs(off0 - dae))
    return HierarchyReport(dev_a, dev_b, count)
