"""DQN training and greedy evaluation.

Plain SGD on the squared TD error, uniform experience replay, a periodically
synchronized target network, epsilon-greedy exploration (optionally fixed-
sigma parameter noise for action selection), optional reward clipping to
[-1, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .qnet import QNetwork, forward, sgd_step, sync_target, td_loss


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Bounded FIFO transition store with seeded uniform sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise TrainingError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = rng
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if not np.isfinite(transition.reward):
            raise TrainingError(f"non-finite reward {transition.reward}")
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        if not self._items:
            raise TrainingError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class TrainerConfig:
    total_timesteps: int
    gamma: float = 0.99
    learning_rate: float = 1e-4
    buffer_capacity: int = 100_000
    learning_starts: int = 1000
    target_sync_every: int = 1000
    batch_size: int = 32
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.02
    epsilon_decay_fraction: float | None = 0.1  # of total timesteps (linear decay)
    epsilon_decay_interval: int | None = None   # geometric decay every N steps
    clip_rewards: bool = False
    hidden_sizes: tuple[int, ...] = (64, 64)
    exploration: str = "epsilon_greedy"  # | "param_noise"
    param_noise_sigma: float = 0.05

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise TrainingError(f"gamma must be in [0,1], got {self.gamma}")
        if not 0.0 <= self.epsilon_final <= self.epsilon_initial <= 1.0:
            raise TrainingError(
                f"need 0 <= final eps <= initial eps <= 1, got "
                f"{self.epsilon_final}, {self.epsilon_initial}"
            )
        if self.total_timesteps < 1 or self.learning_rate <= 0:
            raise TrainingError("bad timesteps or learning rate")
        if self.epsilon_decay_fraction is None and self.epsilon_decay_interval is None:
            raise TrainingError("one of decay fraction / decay interval must be set")
        if self.exploration not in ("epsilon_greedy", "param_noise"):
            raise TrainingError(f"unknown exploration mode {self.exploration!r}")

    def epsilon_at(self, step: int) -> float:
        """Exploration probability at 1-based step ``step``."""
        if self.epsilon_decay_interval is not None:
            # geometric decay sized to land on epsilon_final in the last interval
            n_decays = max(1, self.total_timesteps // self.epsilon_decay_interval - 1)
            if self.epsilon_initial == 0.0:
                return 0.0
            factor = (max(self.epsilon_final, 1e-12) / self.epsilon_initial) ** (1.0 / n_decays)
            k = (step - 1) // self.epsilon_decay_interval
            return max(self.epsilon_final, self.epsilon_initial * factor**k)
        decay_steps = max(1, int(self.total_timesteps * self.epsilon_decay_fraction))
        frac = min(1.0, (step - 1) / decay_steps)
        return self.epsilon_initial + (self.epsilon_final - self.epsilon_initial) * frac


def select_action(net: QNetwork, state, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties break to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise TrainingError(f"epsilon must be in [0,1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(forward(net, state)))


def _param_noise_action(net: QNetwork, state, sigma: float, rng: np.random.Generator) -> int:
    noisy = net.clone()
    for w in noisy.weights:
        w += sigma * rng.standard_normal(w.shape)
    for b in noisy.biases:
        b += sigma * rng.standard_normal(b.shape)
    return int(np.argmax(forward(noisy, state)))


@dataclass
class TrainingTrace:
    rows: list[tuple] = field(default_factory=list)  # episode,step,action,reward,cum,eps,loss
    episode_rewards: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["episode", "step", "action", "reward", "cum_reward",
                             "epsilon", "loss"])
            for episode, step, action, reward, cum, eps, loss in self.rows:
                writer.writerow([episode, step, action, repr(float(reward)),
                                 repr(float(cum)), repr(float(eps)),
                                 "" if loss is None else repr(float(loss))])


def train(env, config: TrainerConfig, seed: int) -> tuple[QNetwork, TrainingTrace]:
    """Run the DQN interaction loop; fully determined by (seed, data, config)."""
    config.validate()
    streams = np.random.SeedSequence(seed).spawn(4)
    rng_init = np.random.default_rng(streams[0])
    rng_env = np.random.default_rng(streams[1])
    rng_explore = np.random.default_rng(streams[2])
    rng_buffer = np.random.default_rng(streams[3])

    net = QNetwork.initialize(
        [env.observation_dim, *config.hidden_sizes, env.n_actions], rng_init)
    target = net.clone()
    buffer = ReplayBuffer(config.buffer_capacity, rng_buffer)
    trace = TrainingTrace()

    obs = env.reset(rng_env)
    episode = 0
    episode_step = 0
    episode_reward = 0.0
    cum_reward = 0.0
    last_loss: float | None = None

    for t in range(1, config.total_timesteps + 1):
        epsilon = config.epsilon_at(t)
        if config.exploration == "param_noise":
            if epsilon > 0.0 and rng_explore.random() < epsilon:
                action = _param_noise_action(net, obs, config.param_noise_sigma, rng_explore)
            else:
                action = int(np.argmax(forward(net, obs)))
        else:
            action = select_action(net, obs, epsilon, rng_explore)
        result = env.step(action)
        stored_reward = float(np.clip(result.reward, -1.0, 1.0)) if config.clip_rewards \
            else result.reward
        buffer.push(Transition(obs, action, stored_reward, result.observation, result.terminal))

        episode_step += 1
        episode_reward += result.reward
        cum_reward += result.reward
        trace.rows.append(
            (episode, episode_step, action, result.reward, cum_reward, epsilon, last_loss))

        if result.terminal:
            trace.episode_rewards.append(episode_reward)
            episode += 1
            episode_step = 0
            episode_reward = 0.0
            obs = env.reset(rng_env)
        else:
            obs = result.observation

        if t > config.learning_starts and len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size)
            try:
                bundle = td_loss(net, target, batch, config.gamma)
                sgd_step(net, bundle, config.learning_rate)
            except ValueError as exc:
                raise TrainingError(f"training aborted at step {t}: {exc}") from exc
            last_loss = bundle.loss
        if t % config.target_sync_every == 0:
            sync_target(net, target)

    return net, trace


@dataclass
class EvaluationTrace:
    rows: list[tuple] = field(default_factory=list)  # episode,step,action,reward,cum,net_worth
    episode_rewards: list[float] = field(default_factory=list)
    final_net_worths: list[float] = field(default_factory=list)


def _rollout(env, pick_action, episodes: int, seed: int) -> EvaluationTrace:
    rng_env = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    trace = EvaluationTrace()
    for episode in range(episodes):
        obs = env.reset(rng_env)
        cum = 0.0
        step = 0
        worth = None
        while True:
            action = pick_action(obs)
            result = env.step(action)
            step += 1
            cum += result.reward
            worth = result.info.get("net_worth")
            trace.rows.append((episode, step, action, result.reward, cum, worth))
            obs = result.observation
            if result.terminal:
                break
        trace.episode_rewards.append(cum)
        if worth is not None:
            trace.final_net_worths.append(worth)
    return trace


def evaluate(net: QNetwork, env, episodes: int, seed: int = 0) -> EvaluationTrace:
    """Pure greedy rollout (epsilon = 0), no learning."""
    return _rollout(env, lambda obs: int(np.argmax(forward(net, obs))), episodes, seed)


def evaluate_random(env, episodes: int, seed: int = 0) -> EvaluationTrace:
    """Uniform-random policy baseline."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    return _rollout(env, lambda obs: int(rng.integers(env.n_actions)), episodes, seed)
