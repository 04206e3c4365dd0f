"""Mitigation-policy learning: finite MDPs, a value-iteration oracle,
tabular Q-learning and a clipped-surrogate softmax policy learner.

Both learners work over discrete state ids. The pipeline state encoder maps
(stage, fused verdict, severity bucket, prior alert count) into a 300-state
space so exact oracles stay tractable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from .env import ConfigError, EnvState
from .agents import Assessment, VulnerabilityClass

ENCODING_VERSION = 1

N_STAGES = 5
N_CLASS_OPTIONS = 5  # benign + four classes
N_SEVERITY_BUCKETS = 3
N_PRIOR_ALERTS = 4
N_STATES = N_STAGES * N_CLASS_OPTIONS * N_SEVERITY_BUCKETS * N_PRIOR_ALERTS

_CLASS_INDEX = {vc: i + 1 for i, vc in enumerate(VulnerabilityClass)}


def severity_bucket(severity: float) -> int:
    if severity < 1.0 / 3.0:
        return 0
    if severity < 2.0 / 3.0:
        return 1
    return 2


def encode_state(state: EnvState, assessment: Assessment,
                 prior_alerts: int = 0) -> int:
    """Deterministic feature-tuple index into the 300-state space."""
    class_opt = 0 if assessment.verdict is None else _CLASS_INDEX[assessment.verdict]
    bucket = severity_bucket(assessment.severity)
    prior = min(max(prior_alerts, 0), N_PRIOR_ALERTS - 1)
    return ((state.stage.value * N_CLASS_OPTIONS + class_opt)
            * N_SEVERITY_BUCKETS + bucket) * N_PRIOR_ALERTS + prior


# -- finite MDPs ---------------------------------------------------------------


@dataclass
class MDPSpec:
    """Finite MDP (states, actions, transition tensor, reward table, gamma)."""

    states: list[str]
    actions: list[str]
    transitions: np.ndarray       # [S, A, S], rows sum to 1
    rewards: np.ndarray           # [S, A]
    gamma: float
    terminal: frozenset[int] = frozenset()
    start: Optional[np.ndarray] = None  # distribution over states

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.start is None:
            self.start = np.zeros(len(self.states))
            self.start[0] = 1.0
        else:
            self.start = np.asarray(self.start, dtype=float)
        self.validate()

    def validate(self) -> None:
        n_s, n_a = len(self.states), len(self.actions)
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must be in [0, 1)")
        if self.transitions.shape != (n_s, n_a, n_s):
            raise ConfigError("transition tensor shape mismatch")
        if self.rewards.shape != (n_s, n_a):
            raise ConfigError("reward table shape mismatch")
        sums = self.transitions.sum(axis=2)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ConfigError("transition rows must sum to 1")
        if not np.isclose(self.start.sum(), 1.0, atol=1e-9):
            raise ConfigError("start distribution must sum to 1")


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray  # greedy action index per state
    sweeps: int


def action_values(mdp: MDPSpec, values: np.ndarray) -> np.ndarray:
    """Q(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) V(s')."""
    q = mdp.rewards + mdp.gamma * np.einsum("ijk,k->ij", mdp.transitions, values)
    if mdp.terminal:
        q[list(mdp.terminal), :] = 0.0
    return q


def value_iteration(mdp: MDPSpec, tolerance: float = 1e-9) -> ValueIterationResult:
    values = np.zeros(len(mdp.states))
    sweeps = 0
    while True:
        q = action_values(mdp, values)
        new_values = q.max(axis=1)
        sweeps += 1
        if np.max(np.abs(new_values - values)) < tolerance:
            values = new_values
            break
        values = new_values
    policy = action_values(mdp, values).argmax(axis=1)
    return ValueIterationResult(values, policy, sweeps)


def bellman_residual(mdp: MDPSpec, values: np.ndarray) -> float:
    return float(np.max(np.abs(action_values(mdp, values).max(axis=1) - values)))


def optimal_reachable_states(mdp: MDPSpec, policy: np.ndarray) -> set[int]:
    """States reachable from the start distribution when following `policy`."""
    frontier = [int(s) for s in np.flatnonzero(mdp.start > 0)]
    seen = set(frontier)
    while frontier:
        s = frontier.pop()
        if s in mdp.terminal:
            continue
        for nxt in np.flatnonzero(mdp.transitions[s, policy[s]] > 0):
            if int(nxt) not in seen:
                seen.add(int(nxt))
                frontier.append(int(nxt))
    return seen


# -- policies ------------------------------------------------------------------


@dataclass
class Policy:
    kind: str                    # "tabular-greedy" | "linear-softmax"
    params: np.ndarray           # [S, A]: Q values or logits
    actions: tuple[str, ...]
    encoding_version: int = ENCODING_VERSION
    seed: int = 0
    epsilon: float = 0.05        # exploration rate used when sampling greedily

    def greedy(self, state_id: int) -> int:
        self._check(state_id)
        row = self.params[state_id]
        return int(np.argmax(row))  # argmax takes the first maximum: fixed tie-break

    def probabilities(self, state_id: int) -> np.ndarray:
        self._check(state_id)
        row = self.params[state_id]
        if self.kind == "linear-softmax":
            return softmax(row)
        n = len(row)
        probs = np.full(n, self.epsilon / n)
        probs[int(np.argmax(row))] += 1.0 - self.epsilon
        return probs

    def _check(self, state_id: int) -> None:
        if not (0 <= state_id < self.params.shape[0]):
            raise ConfigError(f"state id {state_id} out of range")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def select_action(policy: Policy, state_id: int, explore: bool,
                  rng: Optional[np.random.Generator] = None) -> int:
    if not explore:
        return policy.greedy(state_id)
    if rng is None:
        raise ConfigError("exploratory selection requires a seeded rng")
    probs = policy.probabilities(state_id)
    return int(rng.choice(len(probs), p=probs))


def save_policy(policy: Policy, path: str) -> None:
    doc = {
        "kind": policy.kind,
        "encoding_version": policy.encoding_version,
        "actions": list(policy.actions),
        "seed": policy.seed,
        "epsilon": policy.epsilon,
        "params": [[float(v) for v in row] for row in policy.params],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=False)
        fh.write("\n")


def load_policy(path: str) -> Policy:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return Policy(
        kind=doc["kind"],
        params=np.array(doc["params"], dtype=float),
        actions=tuple(doc["actions"]),
        encoding_version=int(doc["encoding_version"]),
        seed=int(doc["seed"]),
        epsilon=float(doc["epsilon"]),
    )


# -- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    algorithm: str = "DQN"            # "DQN" | "PPO"
    learning_rate: Optional[float] = None
    gamma: float = 0.99
    episodes: int = 10_000
    entropy_coeff_start: float = 0.01
    entropy_coeff_end: float = 0.0
    clip_epsilon: float = 0.2
    seed: int = 0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    batch_size: int = 8
    ppo_epochs: int = 4
    max_episode_steps: int = 200

    def __post_init__(self):
        if self.algorithm not in ("DQN", "PPO"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must be in [0, 1)")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.learning_rate is None:
            self.learning_rate = 3e-4 if self.algorithm == "PPO" else 1e-4

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**obj)


def entropy_coefficient(config: TrainConfig, episode: int) -> float:
    """Linear decay from start to end over the configured episode budget."""
    if config.episodes <= 1:
        return config.entropy_coeff_start
    frac = min(max(episode / (config.episodes - 1), 0.0), 1.0)
    return config.entropy_coeff_start + frac * (
        config.entropy_coeff_end - config.entropy_coeff_start
    )


class EpisodicEnv(Protocol):
    n_states: int
    n_actions: int
    action_labels: tuple[str, ...]

    def reset(self, rng: np.random.Generator) -> int: ...
    def step(self, action: int) -> tuple[int, float, bool]: ...


class MDPEnv:
    """Episodic adapter over a finite MDPSpec."""

    def __init__(self, mdp: MDPSpec):
        self.mdp = mdp
        self.n_states = len(mdp.states)
        self.n_actions = len(mdp.actions)
        self.action_labels = tuple(mdp.actions)
        self._state = 0
        self._rng: Optional[np.random.Generator] = None

    def reset(self, rng: np.random.Generator) -> int:
        self._rng = rng
        self._state = int(rng.choice(self.n_states, p=self.mdp.start))
        return self._state

    def step(self, action: int) -> tuple[int, float, bool]:
        s = self._state
        reward = float(self.mdp.rewards[s, action])
        nxt = int(self._rng.choice(self.n_states, p=self.mdp.transitions[s, action]))
        self._state = nxt
        return nxt, reward, nxt in self.mdp.terminal


def train_dqn(env_factory: Callable[[], EpisodicEnv], config: TrainConfig) -> Policy:
    """Tabular Q-learning with epsilon-greedy exploration (linear decay)."""
    env = env_factory()
    rng = np.random.default_rng(config.seed)
    q = np.zeros((env.n_states, env.n_actions))
    for ep in range(config.episodes):
        if config.episodes > 1:
            frac = ep / (config.episodes - 1)
        else:
            frac = 0.0
        eps = config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)
        s = env.reset(rng)
        for _ in range(config.max_episode_steps):
            if rng.random() < eps:
                a = int(rng.integers(env.n_actions))
            else:
                a = int(np.argmax(q[s]))
            nxt, r, done = env.step(a)
            target = r if done else r + config.gamma * float(q[nxt].max())
            q[s, a] += config.learning_rate * (target - q[s, a])
            s = nxt
            if done:
                break
    return Policy(kind="tabular-greedy", params=q, actions=env.action_labels,
                  seed=config.seed, epsilon=config.epsilon_end)


def ppo_objective_and_grad(
    theta: np.ndarray,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    old_logp: np.ndarray,
    clip_epsilon: float,
    entropy_coeff: float,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate objective plus entropy bonus, with its closed-form
    gradient for a softmax policy parameterized by a per-state logit table.

    Returns (objective, d objective / d theta); the objective is maximized.
    """
    n = len(states)
    grad = np.zeros_like(theta)
    total = 0.0
    for t in range(n):
        s, a = int(states[t]), int(actions[t])
        adv = float(advantages[t])
        probs = softmax(theta[s])
        logp = float(np.log(probs[a]))
        ratio = float(np.exp(logp - old_logp[t]))
        clipped = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
        total += min(ratio * adv, clipped * adv)
        # The unclipped branch is active exactly when moving the ratio further
        # in the advantage's direction is still allowed.
        unclipped_active = (ratio <= 1.0 + clip_epsilon) if adv >= 0 \
            else (ratio >= 1.0 - clip_epsilon)
        if unclipped_active:
            dlogp = -probs
            dlogp[a] += 1.0
            grad[s] += adv * ratio * dlogp
        # Entropy bonus.
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(probs > 0, np.log(probs), 0.0)
        entropy = float(-(probs * logs).sum())
        total += entropy_coeff * entropy
        grad[s] += entropy_coeff * (-probs * (logs + entropy))
    return total / n, grad / n


def train_ppo(env_factory: Callable[[], EpisodicEnv], config: TrainConfig) -> Policy:
    """Linear-softmax policy trained with the clipped surrogate objective.

    Advantages are per-step discounted returns minus a running per-state
    baseline; gradients are computed in closed form.
    """
    env = env_factory()
    rng = np.random.default_rng(config.seed)
    theta = np.zeros((env.n_states, env.n_actions))
    baseline = np.zeros(env.n_states)
    baseline_count = np.zeros(env.n_states)
    episodes_done = 0
    while episodes_done < config.episodes:
        batch = min(config.batch_size, config.episodes - episodes_done)
        states, actions, returns = [], [], []
        for _ in range(batch):
            s = env.reset(rng)
            ep_states, ep_actions, ep_rewards = [], [], []
            for _ in range(config.max_episode_steps):
                probs = softmax(theta[s])
                a = int(rng.choice(env.n_actions, p=probs))
                nxt, r, done = env.step(a)
                ep_states.append(s)
                ep_actions.append(a)
                ep_rewards.append(r)
                s = nxt
                if done:
                    break
            g = 0.0
            ep_returns = [0.0] * len(ep_rewards)
            for i in range(len(ep_rewards) - 1, -1, -1):
                g = ep_rewards[i] + config.gamma * g
                ep_returns[i] = g
            states.extend(ep_states)
            actions.extend(ep_actions)
            returns.extend(ep_returns)
        states_a = np.array(states, dtype=int)
        actions_a = np.array(actions, dtype=int)
        returns_a = np.array(returns, dtype=float)
        advantages = returns_a - baseline[states_a]
        for s, g in zip(states_a, returns_a):
            baseline_count[s] += 1
            baseline[s] += (g - baseline[s]) / baseline_count[s]
        old_logp = np.array([
            float(np.log(softmax(theta[s])[a]))
            for s, a in zip(states_a, actions_a)
        ])
        coeff = entropy_coefficient(config, episodes_done)
        for _ in range(config.ppo_epochs):
            _, grad = ppo_objective_and_grad(
                theta, states_a, actions_a, advantages, old_logp,
                config.clip_epsilon, coeff,
            )
            theta = theta + config.learning_rate * grad
        episodes_done += batch
    return Policy(kind="linear-softmax", params=theta, actions=env.action_labels,
                  seed=config.seed)


def train(env_factory: Callable[[], EpisodicEnv], config: TrainConfig) -> Policy:
    if config.algorithm == "PPO":
        return train_ppo(env_factory, config)
    return train_dqn(env_factory, config)
