"""Exact policy values, occupancies and hindsight-optimal policies.

All recursions use the true transition tensor. Value tables are returned
with shape (H+1, S) where the last row is the terminal zero.
"""

import itertools
import logging
from collections.abc import Iterator, Sequence

import numpy as np

from learner.policy_opt import Policy
from mdp.core import LinearMDP, RewardFunction
from shared.constants import BRUTE_FORCE_MAX_PATHS
from shared.exceptions import GuardError

logger = logging.getLogger(__name__)


def exact_policy_value(mdp: LinearMDP, policy: Policy, reward: RewardFunction) -> tuple[np.ndarray, np.ndarray]:
    """Bellman backward recursion Q_h = r_h + P_h V_{h+1}, V_h = <Q_h, pi_h>.

    Returns:
        (V, Q) with V of shape (H+1, S) and Q of shape (H, S, A).
    """
    kernel = mdp.transitions
    probs = policy.probs
    horizon = mdp.horizon
    v = np.zeros((horizon + 1, mdp.num_states))
    q = np.zeros((horizon, mdp.num_states, mdp.num_actions))
    for i in reversed(range(horizon)):
        q[i] = reward.table[i] + kernel[i] @ v[i + 1]
        v[i] = np.sum(q[i] * probs[i], axis=-1)
    return v, q


def occupancy(mdp: LinearMDP, policy: Policy) -> np.ndarray:
    """State-action visitation distribution per step from x_1, shape (H, S, A)."""
    kernel = mdp.transitions
    probs = policy.probs
    state_dist = np.zeros(mdp.num_states)
    state_dist[mdp.initial_state] = 1.0
    visits = np.zeros((mdp.horizon, mdp.num_states, mdp.num_actions))
    for i in range(mdp.horizon):
        visits[i] = state_dist[:, None] * probs[i]
        state_dist = np.einsum("xa,xay->y", visits[i], kernel[i])
    return visits


def brute_force_value(mdp: LinearMDP, policy: Policy, reward: RewardFunction) -> float:
    """V^pi_1(x_1) by summing probability * return over every state-action path.

    Raises:
        GuardError: |S|^H |A|^H exceeds BRUTE_FORCE_MAX_PATHS.
    """
    paths = (mdp.num_states * mdp.num_actions) ** mdp.horizon
    if paths > BRUTE_FORCE_MAX_PATHS:
        raise GuardError(f"Brute force over {paths} paths exceeds guard {BRUTE_FORCE_MAX_PATHS}")

    kernel = mdp.transitions
    probs = policy.probs
    total = 0.0
    for actions in itertools.product(range(mdp.num_actions), repeat=mdp.horizon):
        for next_states in itertools.product(range(mdp.num_states), repeat=mdp.horizon - 1):
            x = mdp.initial_state
            weight, ret = 1.0, 0.0
            for i, a in enumerate(actions):
                weight *= probs[i, x, a]
                ret += reward.table[i, x, a]
                if i < mdp.horizon - 1:
                    x_next = next_states[i]
                    weight *= kernel[i, x, a, x_next]
                    x = x_next
            total += weight * ret
    return total


def greedy_policy_value(mdp: LinearMDP, reward: RewardFunction) -> tuple[Policy, np.ndarray]:
    """Optimal deterministic policy for one reward by backward DP.

    Ties go to the lowest action index.

    Returns:
        (policy, V) with V of shape (H+1, S).
    """
    kernel = mdp.transitions
    v = np.zeros((mdp.horizon + 1, mdp.num_states))
    actions = np.zeros((mdp.horizon, mdp.num_states), dtype=int)
    for i in reversed(range(mdp.horizon)):
        q = reward.table[i] + kernel[i] @ v[i + 1]
        actions[i] = np.argmax(q, axis=-1)
        v[i] = q.max(axis=-1)
    return Policy.from_actions(actions, mdp.num_actions), v


def summed_reward(rewards: Sequence[RewardFunction]) -> RewardFunction:
    return RewardFunction(np.sum([r.table for r in rewards], axis=0))


def hindsight_optimal_policy(mdp: LinearMDP, rewards: Sequence[RewardFunction]) -> Policy:
    """argmax_pi sum_k V^{pi,k}_1(x_1), solved by DP on the summed reward.

    Valid because value is linear in the reward.
    """
    if not rewards:
        raise ValueError("Need at least one reward function")
    policy, _ = greedy_policy_value(mdp, summed_reward(rewards))
    return policy


def deterministic_policies(horizon: int, num_states: int, num_actions: int) -> Iterator[Policy]:
    """Every deterministic Markov policy; A^(S H) of them."""
    for flat in itertools.product(range(num_actions), repeat=horizon * num_states):
        yield Policy.from_actions(np.reshape(flat, (horizon, num_states)), num_actions)
