import hashlib

import numpy as np
import pytest

from tradefool.dqn import (
    ReplayBuffer,
    TrainerConfig,
    TrainingError,
    Transition,
    evaluate,
    evaluate_random,
    select_action,
    train,
)
from tradefool.envs import BasicStockEnv
from tradefool.market_data import synthesize_bars
from tradefool.qnet import QNetwork


def small_config(**overrides):
    fields = dict(total_timesteps=400, gamma=0.95, learning_rate=1e-3,
                  buffer_capacity=200, learning_starts=50, target_sync_every=100,
                  batch_size=16, hidden_sizes=(8,), epsilon_decay_fraction=0.2)
    fields.update(overrides)
    return TrainerConfig(**fields)


@pytest.fixture(scope="module")
def small_env_bars():
    return synthesize_bars(1500, drift=1e-4, volatility=0.01, momentum=-0.3, seed=21)


class TestSelectAction:
    def test_greedy_when_epsilon_zero(self):
        net = QNetwork(sizes=[1, 3], weights=[np.array([[0.0, 1.0, 0.0]])],
                       biases=[np.zeros(3)])
        rng = np.random.default_rng(0)
        assert select_action(net, np.ones(1), 0.0, rng) == 1

    def test_tie_breaks_to_lowest_index(self):
        net = QNetwork(sizes=[1, 3], weights=[np.array([[1.0, 1.0, 0.0]])],
                       biases=[np.zeros(3)])
        assert select_action(net, np.ones(1), 0.0, np.random.default_rng(0)) == 0

    def test_epsilon_one_is_uniform_within_3_sigma(self):
        net = QNetwork(sizes=[1, 3], weights=[np.array([[1.0, 0.0, 0.0]])],
                       biases=[np.zeros(3)])
        rng = np.random.default_rng(123)
        draws = 10_000
        counts = np.zeros(3)
        for _ in range(draws):
            counts[select_action(net, np.ones(1), 1.0, rng)] += 1
        p = 1.0 / 3.0
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) < 3 * sigma)


class TestReplayBuffer:
    @staticmethod
    def transition(tag):
        return Transition(np.array([tag], dtype=float), 0, float(tag),
                          np.array([tag], dtype=float), False)

    def test_never_exceeds_capacity_and_fifo_eviction(self):
        buf = ReplayBuffer(3, np.random.default_rng(0))
        for i in range(7):
            buf.push(self.transition(i))
            assert len(buf) <= 3
        kept = sorted(t.reward for t in buf._items)
        assert kept == [4.0, 5.0, 6.0]

    def test_sampling_uniform_over_contents(self):
        buf = ReplayBuffer(4, np.random.default_rng(5))
        for i in range(4):
            buf.push(self.transition(i))
        draws = [t.reward for t in buf.sample(8000)]
        counts = np.bincount(np.array(draws, dtype=int), minlength=4)
        sigma = np.sqrt(8000 * 0.25 * 0.75)
        assert np.all(np.abs(counts - 2000) < 4 * sigma)

    def test_rejects_non_finite_reward(self):
        buf = ReplayBuffer(2, np.random.default_rng(0))
        with pytest.raises(TrainingError):
            buf.push(Transition(np.zeros(1), 0, float("nan"), np.zeros(1), False))


class TestEpsilonSchedule:
    def test_linear_fraction_decay(self):
        config = small_config(total_timesteps=1000, epsilon_initial=1.0,
                              epsilon_final=0.1, epsilon_decay_fraction=0.1)
        assert config.epsilon_at(1) == 1.0
        assert config.epsilon_at(101) == pytest.approx(0.1)
        assert config.epsilon_at(1000) == pytest.approx(0.1)

    def test_interval_decay_reaches_final(self):
        config = small_config(total_timesteps=1000, epsilon_initial=0.9,
                              epsilon_final=0.05, epsilon_decay_fraction=None,
                              epsilon_decay_interval=200)
        values = [config.epsilon_at(t) for t in (1, 201, 401, 601, 801)]
        assert values[0] == 0.9
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(0.05)
        assert config.epsilon_at(1000) == pytest.approx(0.05)

    def test_validate_rejects_bad_epsilons(self):
        with pytest.raises(TrainingError):
            small_config(epsilon_initial=0.1, epsilon_final=0.5).validate()


class TestTrain:
    def test_no_updates_before_learning_start(self, small_env_bars):
        env = BasicStockEnv(small_env_bars)
        config = small_config(total_timesteps=40, learning_starts=100)
        net, _ = train(env, config, seed=3)
        rng = np.random.default_rng(np.random.SeedSequence(3).spawn(4)[0])
        init = QNetwork.initialize([env.observation_dim, 8, env.n_actions], rng)
        for a, b in zip(net.weights, init.weights):
            assert np.array_equal(a, b)

    def test_same_seed_bit_identical(self, small_env_bars):
        env1 = BasicStockEnv(small_env_bars)
        env2 = BasicStockEnv(small_env_bars)
        net1, trace1 = train(env1, small_config(), seed=11)
        net2, trace2 = train(env2, small_config(), seed=11)
        digest = lambda n: hashlib.sha256(b"".join(w.tobytes() for w in n.weights)).hexdigest()
        assert digest(net1) == digest(net2)
        assert trace1.rows == trace2.rows

    def test_reward_clipping_bounds_buffer_rewards(self, small_env_bars):
        env = BasicStockEnv(small_env_bars, commission_pct=2.5)
        stored = []
        original_push = ReplayBuffer.push

        def spy(self, transition):
            stored.append(transition.reward)
            original_push(self, transition)

        ReplayBuffer.push = spy
        try:
            train(env, small_config(total_timesteps=300, clip_rewards=True), seed=2)
        finally:
            ReplayBuffer.push = original_push
        assert stored and all(-1.0 <= r <= 1.0 for r in stored)

    def test_param_noise_mode_runs_deterministically(self, small_env_bars):
        env1 = BasicStockEnv(small_env_bars)
        env2 = BasicStockEnv(small_env_bars)
        config = small_config(total_timesteps=200, exploration="param_noise")
        net1, _ = train(env1, config, seed=5)
        net2, _ = train(env2, config, seed=5)
        assert all(np.array_equal(a, b) for a, b in zip(net1.weights, net2.weights))

    def test_target_network_constant_between_syncs(self, small_env_bars, monkeypatch):
        import hashlib

        import tradefool.dqn as dqn_module

        hashes = []
        original = dqn_module.td_loss

        def spy(net, target, batch, gamma):
            hashes.append(hashlib.sha256(
                b"".join(w.tobytes() for w in target.weights)).hexdigest())
            return original(net, target, batch, gamma)

        monkeypatch.setattr(dqn_module, "td_loss", spy)
        env = BasicStockEnv(small_env_bars)
        config = small_config(total_timesteps=350, learning_starts=10,
                              target_sync_every=100)
        train(env, config, seed=4)
        # the target hash may change only at sync boundaries: 350 steps with
        # syncs at 100/200/300 allow at most 4 distinct parameter snapshots
        assert len(hashes) > 300
        assert 1 < len(set(hashes)) <= 4
        boundaries = [i for i in range(1, len(hashes)) if hashes[i] != hashes[i - 1]]
        assert len(boundaries) == len(set(hashes)) - 1


class TestEvaluate:
    def test_deterministic_traces(self, small_env_bars):
        env = BasicStockEnv(small_env_bars)
        net = QNetwork.initialize([env.observation_dim, 8, 3], np.random.default_rng(0))
        t1 = evaluate(net, env, episodes=3, seed=9)
        t2 = evaluate(net, env, episodes=3, seed=9)
        assert t1.rows == t2.rows

    def test_episode_length_capped(self, small_env_bars):
        env = BasicStockEnv(small_env_bars, episode_cap=50)
        net = QNetwork.initialize([env.observation_dim, 8, 3], np.random.default_rng(0))
        trace = evaluate(net, env, episodes=2, seed=1)
        lengths = [sum(1 for r in trace.rows if r[0] == e) for e in range(2)]
        assert lengths == [51, 51]  # terminal fires once length exceeds the cap

    def test_zero_weight_net_constant_action_on_flat_data(self, flat_bars):
        env = BasicStockEnv(flat_bars, commission_pct=0.1, episode_cap=30)
        net = QNetwork(sizes=[32, 3], weights=[np.zeros((32, 3))], biases=[np.zeros(3)])
        trace = evaluate(net, env, episodes=1, seed=0)
        actions = {row[2] for row in trace.rows}
        assert actions == {0}  # all-equal Q ties to wait
        assert trace.episode_rewards[0] == 0.0

    def test_trained_beats_random_on_strong_uptrend(self):
        bars = synthesize_bars(3000, drift=3e-3, volatility=1e-4, seed=13)
        env = BasicStockEnv(bars, commission_pct=0.0, episode_cap=100)
        config = TrainerConfig(total_timesteps=4000, gamma=0.9, learning_rate=1e-2,
                               buffer_capacity=5000, learning_starts=200,
                               target_sync_every=250, batch_size=32, hidden_sizes=(16,),
                               epsilon_decay_fraction=0.5)
        net, _ = train(env, config, seed=1)
        greedy = evaluate(net, env, episodes=20, seed=77)
        random_policy = evaluate_random(env, episodes=20, seed=77)
        assert np.mean(greedy.episode_rewards) > np.mean(random_policy.episode_rewards)


class TestTrace:
    def test_cum_reward_is_prefix_sum_and_csv_written(self, small_env_bars, tmp_path):
        env = BasicStockEnv(small_env_bars)
        _, trace = train(env, small_config(total_timesteps=120), seed=6)
        cums = {}
        for episode, step, action, reward, cum, eps, loss in trace.rows:
            cums.setdefault("total", 0.0)
            cums["total"] += reward
            assert cum == pytest.approx(cums["total"])
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "episode,step,action,reward,cum_reward,epsilon,loss"
