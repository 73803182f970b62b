"""
Tests for the episode loop and agent checkpoints.
Run with: python -m learner.test_agent
"""

import tempfile
from pathlib import Path

import numpy as np
from scipy.special import softmax

from learner.agent import HyperParams, begin_episode, end_episode, init_agent
from learner.checkpoint import load_checkpoint, save_checkpoint
from mdp.core import RewardFunction, run_episode
from mdp.instances import InstanceSpec, random_tabular
from oracles.values import exact_policy_value
from shared.constants import AgentMode
from shared.exceptions import ConfigError, ProtocolError


def _setup(seed=0):
    mdp = random_tabular(InstanceSpec("tabular-random", horizon=3, num_states=3, num_actions=2, seed=seed))
    rewards = [
        RewardFunction(table)
        for table in np.random.default_rng(seed + 100).uniform(size=(40, 3, 3, 2))
    ]
    return mdp, rewards


def _play(state, mdp, rewards, rng, episodes):
    """Run `episodes` episodes; returns the committed policies."""
    policies = []
    for _ in range(episodes):
        policy = begin_episode(state)
        policies.append(policy)
        reward = rewards[state.k - 1]
        traj = run_episode(mdp, policy, reward, rng, episode=state.k)
        end_episode(state, traj, reward)
    return policies


def test_first_episode_policies():
    print("\n=== Testing first-episode policies ===")
    mdp, _ = _setup()
    hyper = HyperParams(episodes=10, alpha=0.5)
    for mode in (AgentMode.OPPO, AgentMode.NO_BONUS, AgentMode.UNIFORM, AgentMode.IDEAL_OPPO):
        policy = begin_episode(init_agent(mode, mdp, hyper))
        assert np.all(policy.probs == 0.5), mode
    greedy = begin_episode(init_agent(AgentMode.GREEDY_LSVI, mdp, hyper))
    assert np.all(greedy.probs[..., 0] == 1.0)
    print("First-episode policy test: PASSED")


def test_protocol_errors():
    mdp, rewards = _setup()
    state = init_agent("oppo", mdp, HyperParams(episodes=5, alpha=0.5))
    traj = run_episode(mdp, state.policy, rewards[0], np.random.default_rng(0), episode=1)
    try:
        end_episode(state, traj, rewards[0])
        assert False, "end_episode before begin_episode must raise"
    except ProtocolError:
        pass

    first = begin_episode(state)
    assert begin_episode(state) is first
    wrong = run_episode(mdp, first, rewards[0], np.random.default_rng(0), episode=2)
    try:
        end_episode(state, wrong, rewards[0])
        assert False, "trajectory from another episode must raise"
    except ProtocolError:
        pass
    end_episode(state, traj, rewards[0])
    assert state.k == 2


def test_hyperparams_validation():
    for kwargs in (dict(episodes=0, alpha=0.1), dict(episodes=5, alpha=-0.1)):
        try:
            HyperParams(**kwargs)
            assert False
        except ConfigError:
            pass
    hyper = HyperParams(episodes=5, alpha=0.1, beta=3.0)
    assert hyper.bonus_params(18, 3).beta == 3.0


def test_gram_matches_history_buffer():
    print("\n=== Testing accumulator bookkeeping ===")
    mdp, rewards = _setup(seed=1)
    state = init_agent(AgentMode.OPPO, mdp, HyperParams(episodes=30, alpha=0.3))
    _play(state, mdp, rewards, np.random.default_rng(1), 30)
    for i, acc in enumerate(state.accumulators):
        features, _ = state.history.arrays(i, mdp.dimension)
        assert state.history.size(i) == 30
        rebuilt = np.eye(mdp.dimension) + features.T @ features
        assert np.abs(acc.gram - rebuilt).max() < 1e-8
        assert np.abs(acc.gram_inv - np.linalg.inv(rebuilt)).max() < 1e-8
    print("Accumulator bookkeeping test: PASSED")


def test_zero_step_size_keeps_uniform_policy():
    mdp, rewards = _setup(seed=2)
    state = init_agent(AgentMode.OPPO, mdp, HyperParams(episodes=20, alpha=0.0))
    for policy in _play(state, mdp, rewards, np.random.default_rng(2), 20):
        assert np.all(policy.probs == 0.5)


def test_policy_is_softmax_of_summed_q():
    mdp, rewards = _setup(seed=3)
    alpha = 0.2
    state = init_agent(AgentMode.OPPO, mdp, HyperParams(episodes=15, alpha=alpha))
    rng = np.random.default_rng(3)
    total = np.zeros((3, 3, 2))
    for _ in range(15):
        policy = begin_episode(state)
        assert np.allclose(policy.probs, softmax(alpha * total, axis=-1), atol=1e-12)
        reward = rewards[state.k - 1]
        end_episode(state, run_episode(mdp, policy, reward, rng, episode=state.k), reward)
        total += state.values.q


def test_uniform_mode_skips_evaluation():
    mdp, rewards = _setup(seed=4)
    state = init_agent(AgentMode.UNIFORM, mdp, HyperParams(episodes=5, alpha=0.5))
    _play(state, mdp, rewards, np.random.default_rng(4), 5)
    assert state.last_evaluation is None
    assert np.array_equal(state.values.q, np.zeros((3, 3, 2)))
    assert all(acc.count == 0 for acc in state.accumulators)


def test_ideal_mode_uses_exact_values():
    mdp, rewards = _setup(seed=5)
    state = init_agent(AgentMode.IDEAL_OPPO, mdp, HyperParams(episodes=5, alpha=0.5))
    policies = _play(state, mdp, rewards, np.random.default_rng(5), 5)
    v, q = exact_policy_value(mdp, policies[-1], rewards[4])
    assert np.array_equal(state.values.q, q)
    assert np.array_equal(state.values.v, v)
    assert state.history.size(0) == 0


def test_no_bonus_mode_has_zero_bonus():
    mdp, rewards = _setup(seed=6)
    state = init_agent(AgentMode.NO_BONUS, mdp, HyperParams(episodes=5, alpha=0.5))
    _play(state, mdp, rewards, np.random.default_rng(6), 5)
    evaluation = state.last_evaluation
    assert np.array_equal(evaluation.bonus, np.zeros((3, 3, 2)))
    ceilings = np.arange(3, 0, -1)[:, None, None]
    assert np.array_equal(evaluation.values.q, np.clip(evaluation.q_bar, 0.0, ceilings))


def test_same_seeds_same_run():
    mdp, rewards = _setup(seed=7)
    states = []
    for _ in range(2):
        state = init_agent(AgentMode.OPPO, mdp, HyperParams(episodes=10, alpha=0.4))
        _play(state, mdp, rewards, np.random.default_rng(7), 10)
        states.append(state)
    a, b = states
    assert np.array_equal(a.policy.logits, b.policy.logits)
    for acc_a, acc_b in zip(a.accumulators, b.accumulators):
        assert np.array_equal(acc_a.gram_inv, acc_b.gram_inv)


def test_checkpoint_restores_bit_exact_state():
    print("\n=== Testing checkpoints ===")
    mdp, rewards = _setup(seed=8)
    state = init_agent(AgentMode.OPPO, mdp, HyperParams(episodes=20, alpha=0.35, c_beta=0.5))
    _play(state, mdp, rewards, np.random.default_rng(8), 10)

    with tempfile.TemporaryDirectory() as tmp:
        path = save_checkpoint(state, Path(tmp) / "agent.json")
        restored = load_checkpoint(path, mdp)

    assert restored.k == state.k == 11
    assert restored.mode == state.mode and restored.hyper == state.hyper
    assert restored.bonus_params == state.bonus_params
    assert np.array_equal(restored.policy.logits, state.policy.logits)
    assert np.array_equal(restored.values.q, state.values.q)
    for acc_a, acc_b in zip(restored.accumulators, state.accumulators):
        assert np.array_equal(acc_a.gram, acc_b.gram)
        assert np.array_equal(acc_a.gram_inv, acc_b.gram_inv)
        assert np.array_equal(acc_a.target, acc_b.target)
        assert acc_a.since_refactor == acc_b.since_refactor

    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    _play(state, mdp, rewards, rng_a, 5)
    _play(restored, mdp, rewards, rng_b, 5)
    assert np.array_equal(restored.policy.logits, state.policy.logits)
    assert np.array_equal(restored.values.q, state.values.q)
    print("Checkpoint test: PASSED")


if __name__ == "__main__":
    test_first_episode_policies()
    test_protocol_errors()
    test_hyperparams_validation()
    test_gram_matches_history_buffer()
    test_zero_step_size_keeps_uniform_policy()
    test_policy_is_softmax_of_summed_q()
    test_uniform_mode_skips_evaluation()
    test_ideal_mode_uses_exact_values()
    test_no_bonus_mode_has_zero_bonus()
    test_same_seeds_same_run()
    test_checkpoint_restores_bit_exact_state()
    print("\n=== ALL AGENT TESTS PASSED ===")
