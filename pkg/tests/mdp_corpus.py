"""Small finite MDPs with known-unique optimal policies.

Each builder returns an MDPSpec whose optimal policy is unique on every
non-terminal state reachable under it (asserted via the Q-value gap), so
learned greedy policies can be compared against the value-iteration oracle
without tie ambiguity.
"""

from __future__ import annotations

import numpy as np

from pipeguard.learning import MDPSpec, action_values, value_iteration


def toy_compromise_mdp() -> MDPSpec:
    """Two live states (clean, compromised) plus a terminal.

    Blocking a clean build costs a false-positive penalty; letting a
    compromised build through costs more than blocking it.
    """
    states = ["clean", "compromised", "done"]
    actions = ["allow", "block"]
    P = np.zeros((3, 2, 3))
    R = np.zeros((3, 2))
    P[0, 0] = [0.7, 0.3, 0.0]   # allow on clean: may get compromised
    R[0, 0] = 0.0
    P[0, 1] = [1.0, 0.0, 0.0]   # block on clean: wasted intervention
    R[0, 1] = -0.5
    P[1, 0] = [0.0, 0.0, 1.0]   # allow on compromised: ships the attack
    R[1, 0] = -1.0
    P[1, 1] = [0.0, 0.0, 1.0]   # block on compromised: mitigates
    R[1, 1] = 1.0
    P[2, :, 2] = 1.0
    return MDPSpec(states, actions, P, R, gamma=0.95, terminal=frozenset({2}))


def chain_mdp(length: int = 8) -> MDPSpec:
    """Walk right to the terminal reward; stepping left wastes time."""
    n = length + 1
    states = [f"s{i}" for i in range(length)] + ["goal"]
    actions = ["left", "right"]
    P = np.zeros((n, 2, n))
    R = np.full((n, 2), -0.04)
    for i in range(length):
        P[i, 0, max(i - 1, 0)] = 1.0
        P[i, 1, i + 1] = 1.0
        if i + 1 == length:
            R[i, 1] = 1.0
    P[length, :, length] = 1.0
    R[length, :] = 0.0
    return MDPSpec(states, actions, P, R, gamma=0.95,
                   terminal=frozenset({length}))


def gridworld_mdp(size: int = 3) -> MDPSpec:
    """Deterministic grid; reach the far corner, one pit to avoid."""
    n = size * size
    states = [f"({r},{c})" for r in range(size) for c in range(size)]
    actions = ["up", "down", "left", "right"]
    goal = n - 1
    pit = size  # cell (1, 0)
    moves = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
    # Slightly asymmetric step costs break ties between equal-length paths,
    # keeping the optimal policy unique.
    step_cost = {"up": -0.06, "down": -0.05, "left": -0.07, "right": -0.04}
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    for r in range(size):
        for c in range(size):
            s = r * size + c
            if s in (goal, pit):
                P[s, :, s] = 1.0
                continue
            for a, name in enumerate(actions):
                dr, dc = moves[name]
                nr, nc = min(max(r + dr, 0), size - 1), min(max(c + dc, 0), size - 1)
                nxt = nr * size + nc
                P[s, a, nxt] = 1.0
                if nxt == goal:
                    R[s, a] = 1.0
                elif nxt == pit:
                    R[s, a] = -1.0
                else:
                    R[s, a] = step_cost[name]
    return MDPSpec(states, actions, P, R, gamma=0.95,
                   terminal=frozenset({goal, pit}))


def random_episodic_mdp(seed: int, n_states: int = 6, n_actions: int = 3) -> MDPSpec:
    """Random dense MDP with one absorbing terminal and a unique optimum."""
    rng = np.random.default_rng(seed)
    terminal = n_states - 1
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # Guarantee episodes end: every (s, a) reaches the terminal with p >= 0.1.
    P[:, :, terminal] = np.maximum(P[:, :, terminal], 0.1)
    P /= P.sum(axis=2, keepdims=True)
    P[terminal] = 0.0
    P[terminal, :, terminal] = 1.0
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    R[terminal] = 0.0
    return MDPSpec([f"s{i}" for i in range(n_states)],
                   [f"a{i}" for i in range(n_actions)],
                   P, R, gamma=0.9, terminal=frozenset({terminal}))


def optimal_gap(mdp: MDPSpec, reachable: set[int]) -> float:
    """Smallest Q-margin of the optimal action over the runner-up on
    reachable non-terminal states."""
    result = value_iteration(mdp)
    q = action_values(mdp, result.values)
    gaps = []
    for s in sorted(reachable - set(mdp.terminal)):
        row = np.sort(q[s])[::-1]
        gaps.append(row[0] - row[1])
    return min(gaps) if gaps else float("inf")


def corpus() -> list[tuple[str, MDPSpec]]:
    mdps = [
        ("toy-compromise", toy_compromise_mdp()),
        ("chain-8", chain_mdp(8)),
        ("gridworld-3x3", gridworld_mdp(3)),
        ("random-a", random_episodic_mdp(11)),
        ("random-b", random_episodic_mdp(41)),
    ]
    assert all(len(m.states) <= 50 for _, m in mdps)
    return mdps
