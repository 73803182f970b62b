"""
Tests for instance generators and JSON instance files.
Run with: python -m mdp.test_instances
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from learner.policy_opt import uniform_policy
from mdp.core import FeatureMap, LinearMDP, validate_linear_mdp
from mdp.instance_io import instance_from_dict, instance_to_dict, load_instance, save_instance
from mdp.instances import (
    InstanceSpec,
    build_instance,
    combination_lock,
    named_reward,
    random_linear,
    random_tabular,
)
from oracles.values import exact_policy_value, greedy_policy_value
from shared.exceptions import InstanceError, RewardError


def test_random_tabular_valid_and_reproducible():
    print("\n=== Testing random tabular instances ===")
    for seed in range(10):
        spec = InstanceSpec("tabular-random", horizon=3, num_states=4, num_actions=2, seed=seed)
        mdp = random_tabular(spec)
        assert validate_linear_mdp(mdp).passed
        assert mdp.dimension == 4 * 4 * 2
        again = random_tabular(spec)
        assert np.array_equal(mdp.theta, again.theta)
    print("Random tabular test: PASSED")


def test_combination_lock_values():
    print("\n=== Testing combination lock ===")
    horizon, num_actions = 4, 2
    mdp, reward = combination_lock(horizon, num_actions, reward_value=1.0, seed=3)
    assert mdp.num_states == horizon + 2
    assert validate_linear_mdp(mdp).passed
    assert reward.table.sum() == 1.0

    _, v_star = greedy_policy_value(mdp, reward)
    assert abs(v_star[0, 0] - 1.0) < 1e-12

    v_uniform, _ = exact_policy_value(mdp, uniform_policy(horizon, mdp.num_states, num_actions), reward)
    assert abs(v_uniform[0, 0] - num_actions ** (-horizon)) < 1e-12

    scaled, scaled_reward = combination_lock(horizon, num_actions, reward_value=0.5, seed=3)
    _, v_scaled = greedy_policy_value(scaled, scaled_reward)
    assert abs(v_scaled[0, 0] - 0.5) < 1e-12
    print("Combination lock test: PASSED")


def test_combination_lock_rejects_bad_arguments():
    for args in ((1, 2), (3, 1)):
        try:
            combination_lock(*args)
            assert False, f"{args} should be rejected"
        except InstanceError:
            pass
    try:
        combination_lock(3, 2, reward_value=1.5)
        assert False
    except RewardError:
        pass


def test_random_linear_valid():
    print("\n=== Testing linear mixture instances ===")
    for d in (2, 4, 8):
        for seed in range(10):
            spec = InstanceSpec("linear-mixture", horizon=3, num_states=5, num_actions=3, d=d, seed=seed)
            mdp = random_linear(spec)
            report = validate_linear_mdp(mdp)
            assert report.passed, report.checks
            assert mdp.dimension == d
    print("Linear mixture test: PASSED")


def test_single_kernel_mixture_is_its_kernel():
    spec = InstanceSpec("linear-mixture", horizon=2, num_states=3, num_actions=2, d=1, seed=7)
    mdp = random_linear(spec)
    kernel = mdp.features.kernels[0]
    for i in range(2):
        assert np.allclose(mdp.transitions[i], kernel, atol=1e-12)


def test_one_hot_theta_selects_kernel():
    spec = InstanceSpec("linear-mixture", horizon=2, num_states=3, num_actions=2, d=3, seed=8)
    base = random_linear(spec)
    theta = np.zeros((2, 3))
    theta[0, 2] = 1.0
    theta[1, 0] = 1.0
    mdp = LinearMDP(2, base.states, base.actions, base.features, theta)
    assert np.allclose(mdp.transitions[0], base.features.kernels[2], atol=1e-12)
    assert np.allclose(mdp.transitions[1], base.features.kernels[0], atol=1e-12)


def test_mixture_weights_blend_kernels():
    spec = InstanceSpec("linear-mixture", horizon=1, num_states=3, num_actions=2, d=2, seed=9)
    base = random_linear(spec)
    mdp = LinearMDP(1, base.states, base.actions, base.features, np.array([[0.3, 0.7]]))
    kernels = base.features.kernels
    assert np.allclose(mdp.transitions[0], 0.3 * kernels[0] + 0.7 * kernels[1], atol=1e-12)


def test_instance_spec_validation():
    bad_specs = [
        dict(kind="maze", horizon=2, num_states=2),
        dict(kind="tabular-random", horizon=2, num_states=2, num_actions=2, d=5),
        dict(kind="linear-mixture", horizon=2, num_states=2),
        dict(kind="tabular-random", horizon=0, num_states=2),
        dict(kind="tabular-random", horizon=2, num_states=2, concentration=0.0),
    ]
    for kwargs in bad_specs:
        try:
            InstanceSpec(**kwargs)
            assert False, f"{kwargs} should be rejected"
        except InstanceError:
            pass
    spec = InstanceSpec("tabular-random", horizon=2, num_states=2)
    assert spec.with_seed(9).seed == 9 and spec.seed == 0


def test_build_instance_and_named_rewards():
    lock_spec = InstanceSpec("combination-lock", horizon=3, num_actions=2, seed=1)
    mdp, lock = build_instance(lock_spec)
    assert lock is not None
    rng = np.random.default_rng(0)
    assert named_reward("lock", mdp, rng, lock) is lock
    assert named_reward("ones", mdp, rng).table.min() == 1.0
    assert named_reward("zeros", mdp, rng).table.max() == 0.0
    random_reward = named_reward("random", mdp, rng)
    assert random_reward.shape == (3, 5, 2)
    assert 0.0 <= random_reward.table.min() and random_reward.table.max() <= 1.0

    tabular, none = build_instance(InstanceSpec("tabular-random", horizon=2, num_states=3))
    assert none is None
    for name in ("lock", "spiky"):
        try:
            named_reward(name, tabular, rng)
            assert False, f"{name} should be rejected"
        except RewardError:
            pass


def test_instance_files():
    print("\n=== Testing instance files ===")
    tabular = random_tabular(InstanceSpec("tabular-random", horizon=2, num_states=3, seed=4))
    mixture = random_linear(InstanceSpec("linear-mixture", horizon=2, num_states=3, d=4, seed=4))
    explicit = LinearMDP(
        2, mixture.states, mixture.actions,
        FeatureMap("explicit", mixture.features.tensor), mixture.theta,
    )

    with tempfile.TemporaryDirectory() as tmp:
        for name, mdp in (("tabular", tabular), ("mixture", mixture), ("explicit", explicit)):
            path = save_instance(mdp, Path(tmp) / f"{name}.json")
            text = path.read_text(encoding="utf-8")
            assert text.endswith("\n") and "\r" not in text
            loaded = load_instance(path)
            assert loaded.features.kind == mdp.features.kind
            assert np.array_equal(loaded.theta, mdp.theta)
            assert np.array_equal(loaded.features.tensor, mdp.features.tensor)

        try:
            load_instance(Path(tmp) / "missing.json")
            assert False
        except InstanceError:
            pass

    data = instance_to_dict(tabular)
    assert data["features"] is None
    del data["theta"]
    try:
        instance_from_dict(json.loads(json.dumps(data)))
        assert False
    except InstanceError as e:
        assert "theta" in str(e)
    print("Instance file test: PASSED")


if __name__ == "__main__":
    test_random_tabular_valid_and_reproducible()
    test_combination_lock_values()
    test_combination_lock_rejects_bad_arguments()
    test_random_linear_valid()
    test_single_kernel_mixture_is_its_kernel()
    test_one_hot_theta_selects_kernel()
    test_mixture_weights_blend_kernels()
    test_instance_spec_validation()
    test_build_instance_and_named_rewards()
    test_instance_files()
    print("\n=== ALL INSTANCE TESTS PASSED ===")
