"""Built-in MDPs: the three toy problems, a slippery gridworld, a chain, and random instances.

Toy state numbering is zero-based: toy state ``k`` in a diagram is index ``k - 1``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .mdp import FiniteMdp

UP, DOWN = 0, 1


def _single_action_rows(P: np.ndarray, R: np.ndarray, mask: np.ndarray) -> None:
    # unavailable actions mirror action 0
    for s, a in zip(*np.nonzero(~mask)):
        P[s, a] = P[s, 0]
        R[s, a] = R[s, 0]


def _terminal_rows(P: np.ndarray, terminal: np.ndarray) -> None:
    for s in np.flatnonzero(terminal):
        P[s, :, :] = 0.0
        P[s, :, s] = 1.0


def fig3() -> FiniteMdp:
    """States 1, 2 lead to 3; at 3, ``u`` pays 1 and ``d`` pays 0; 4 is terminal."""
    S, A = 4, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    mask = np.array([[True, False], [True, False], [True, True], [True, True]])
    P[0, 0, 2] = P[1, 0, 2] = 1.0
    P[2, UP, 3] = P[2, DOWN, 3] = 1.0
    R[2, UP] = 1.0
    terminal = np.array([False, False, False, True])
    _single_action_rows(P, R, mask)
    _terminal_rows(P, terminal)
    return FiniteMdp(P, R, 1.0, [0.9, 0.1, 0.0, 0.0], terminal, mask, name="fig3")


def fig4(stochastic: bool = True) -> FiniteMdp:
    """Fig. 3 extended: state 4 moves to 5 (reward 1) or 6 (reward 0) at random; 7 is terminal.

    With ``stochastic=False`` state 4 always moves to 5.
    """
    S, A = 7, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    mask = np.zeros((S, A), dtype=bool)
    mask[:, 0] = True
    mask[2, DOWN] = True
    mask[6, :] = True
    P[0, 0, 2] = P[1, 0, 2] = 1.0
    P[2, UP, 3] = P[2, DOWN, 3] = 1.0
    R[2, UP] = 1.0
    if stochastic:
        P[3, 0, 4] = P[3, 0, 5] = 0.5
    else:
        P[3, 0, 4] = 1.0
    P[4, 0, 6] = P[5, 0, 6] = 1.0
    R[4, 0] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[6] = True
    _single_action_rows(P, R, mask)
    _terminal_rows(P, terminal)
    name = "fig4" if stochastic else "fig4-deterministic"
    return FiniteMdp(P, R, 1.0, [0.9, 0.1, 0, 0, 0, 0, 0], terminal, mask, name=name)


def counterexample() -> FiniteMdp:
    """State 1 reaches 2 or the terminal with equal odds; at 2, ``u`` pays 1 and ``d`` pays 0."""
    S, A = 3, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    mask = np.array([[True, False], [True, True], [True, True]])
    P[0, 0, 1] = P[0, 0, 2] = 0.5
    P[1, UP, 2] = P[1, DOWN, 2] = 1.0
    R[1, UP] = 1.0
    terminal = np.array([False, False, True])
    _single_action_rows(P, R, mask)
    _terminal_rows(P, terminal)
    return FiniteMdp(P, R, 1.0, [1.0, 0.0, 0.0], terminal, mask, name="counterexample")


def chain(length: int = 5, discount: float = 0.9) -> FiniteMdp:
    """Deterministic corridor; stepping right off the last cell pays 1 and terminates.

    ``length`` counts states including the terminal.  Action 0 moves left
    (bounded at cell 0), action 1 moves right.
    """
    if length < 2:
        raise ConfigurationError("chain needs at least two states")
    S, A = length, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S - 1):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, s + 1] = 1.0
    R[S - 2, 1] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[-1] = True
    _terminal_rows(P, terminal)
    rho = np.zeros(S)
    rho[0] = 1.0
    return FiniteMdp(P, R, discount, rho, terminal, name=f"chain{length}")


# Cell codes: S start, . floor, G goal (+1), g small goal, P pit (-1).
# Entering G/g/P moves onto an exit cell whose only action pays the cell
# reward and ends the episode.
# Two corridors walled by pits: every route to the goal risks slipping into one.
DEFAULT_LAYOUT = (
    ".....",
    ".PPP.",
    ".....",
    ".PPP.",
    "S...G",
)
CELL_REWARDS = {"G": 1.0, "g": 0.3, "P": -1.0}
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


def gridworld(
    width: int = 5,
    height: int = 5,
    slip_prob: float = 0.0,
    layout: tuple[str, ...] | None = None,
    discount: float = 0.99,
    step_reward: float = 0.0,
    rewards: dict[str, float] | None = None,
) -> FiniteMdp:
    """Four-action gridworld; with probability ``slip_prob`` the move goes sideways.

    A slip picks one of the two perpendicular directions uniformly.  Moves off
    the grid leave the agent in place.  Cell ``row * width + col`` is its state
    index and one extra absorbing terminal state comes last.
    """
    layout = DEFAULT_LAYOUT if layout is None else tuple(layout)
    if len(layout) != height or any(len(row) != width for row in layout):
        raise ConfigurationError(f"layout must be {height} rows of {width} cells")
    if not 0.0 <= slip_prob <= 1.0:
        raise ConfigurationError("slip_prob must lie in [0, 1]")
    cell_rewards = dict(CELL_REWARDS if rewards is None else rewards)
    n_cells = width * height
    S, A = n_cells + 1, 4
    T = n_cells
    P = np.zeros((S, A, S))
    R = np.full((S, A), float(step_reward))
    mask = np.ones((S, A), dtype=bool)
    rho = np.zeros(S)

    def cell(r: int, c: int) -> int:
        return r * width + c

    for r in range(height):
        for c in range(width):
            s = cell(r, c)
            code = layout[r][c]
            if code not in "S.GgP":
                raise ConfigurationError(f"unknown cell code {code!r}")
            if code == "S":
                rho[s] = 1.0
            if code in cell_rewards and code != ".":
                mask[s, 1:] = False
                P[s, :, T] = 1.0
                R[s, :] = cell_rewards[code]
                continue
            for a, (dr, dc) in enumerate(_MOVES):
                side = [m for m in _MOVES if m[0] * dr + m[1] * dc == 0]
                outcomes = [((dr, dc), 1.0 - slip_prob)] + [(m, slip_prob / 2) for m in side]
                for (mr, mc), prob in outcomes:
                    if prob == 0.0:
                        continue
                    nr, nc = r + mr, c + mc
                    if not (0 <= nr < height and 0 <= nc < width):
                        nr, nc = r, c
                    P[s, a, cell(nr, nc)] += prob
    if rho.sum() == 0:
        raise ConfigurationError("layout has no start cell")
    rho /= rho.sum()
    terminal = np.zeros(S, dtype=bool)
    terminal[T] = True
    R[T] = 0.0
    _terminal_rows(P, terminal)
    return FiniteMdp(P, R, discount, rho, terminal, mask, name=f"gridworld{width}x{height}-slip{slip_prob:g}")


def random_mdp(seed, num_states: int, num_actions: int, discount: float = 1.0) -> FiniteMdp:
    """Random episodic MDP used by property tests.

    The last state is terminal.  Each non-terminal row puts at least 0.1 on the
    terminal and spreads the rest by a Dirichlet(1) draw over all states;
    rewards are uniform in [-1, 1]; the start distribution is Dirichlet(1) over
    the non-terminal states.
    """
    if num_states < 2 or num_actions < 1:
        raise ConfigurationError("random MDP needs at least 2 states and 1 action")
    rng = np.random.default_rng(seed)
    S, A = num_states, num_actions
    T = S - 1
    P = 0.9 * rng.dirichlet(np.ones(S), size=(S, A))
    P[:, :, T] += 0.1
    R = rng.uniform(-1.0, 1.0, size=(S, A))
    terminal = np.zeros(S, dtype=bool)
    terminal[T] = True
    R[T] = 0.0
    _terminal_rows(P, terminal)
    rho = np.zeros(S)
    rho[:T] = rng.dirichlet(np.ones(T))
    return FiniteMdp(P, R, discount, rho, terminal, name=f"random-{seed}-{S}x{A}")


def random_policy(seed, mdp: FiniteMdp, concentration: float = 1.0):
    """Dirichlet-distributed stochastic policy over the available actions."""
    from .mdp import PolicyTable

    rng = np.random.default_rng(seed)
    probs = np.zeros((mdp.num_states, mdp.num_actions))
    for s in range(mdp.num_states):
        avail = np.flatnonzero(mdp.action_mask[s])
        probs[s, avail] = rng.dirichlet(np.full(len(avail), concentration))
    return PolicyTable(probs)


def build(name: str, **kwargs) -> FiniteMdp:
    """Look up a built-in MDP by name (used by the command line)."""
    table = {
        "fig3": fig3,
        "fig4": fig4,
        "counterexample": counterexample,
        "chain": chain,
        "gridworld": gridworld,
        "random": random_mdp,
    }
    if name not in table:
        raise ConfigurationError(f"unknown MDP {name!r}; choose from {sorted(table)}")
    return table[name](**kwargs)
