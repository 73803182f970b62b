"""Episode loop for OPPO and its baselines.

One AgentState per run. Each episode the caller does:

    policy = begin_episode(state)          # commits pi^k before r^k exists
    traj = run_episode(mdp, policy, r_k, rng, episode=state.k)
    end_episode(state, traj, r_k)          # evaluation, history, k += 1

begin_episode never sees a reward, so the learner cannot read r^k before
acting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from learner.config import C_BETA_DEFAULT, LAZY_FEATURES_DEFAULT, RIDGE_LAMBDA, ZETA_DEFAULT
from learner.policy_eval import (
    BonusParams,
    Evaluation,
    HistoryBuffer,
    RidgeAccumulator,
    ValueTables,
    evaluate_policy,
    make_accumulators,
    record_episode,
)
from learner.policy_opt import Policy, greedy_policy, improve_policy, uniform_policy
from mdp.core import LinearMDP, RewardFunction, Trajectory
from oracles.values import exact_policy_value
from shared.constants import AgentMode
from shared.exceptions import ConfigError, ProtocolError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    """Resolved hyperparameters for one run.

    alpha is numeric here; "auto" is resolved by the experiment config.
    beta, when set, overrides the theory-derived bonus scale.
    """

    episodes: int
    alpha: float
    lam: float = RIDGE_LAMBDA
    c_beta: float = C_BETA_DEFAULT
    zeta: float = ZETA_DEFAULT
    beta: float | None = None
    lazy_features: bool = LAZY_FEATURES_DEFAULT

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError(f"Episode count K must be >= 1, got {self.episodes}")
        if self.alpha < 0:
            raise ConfigError(f"Step size alpha must be >= 0, got {self.alpha}")

    def bonus_params(self, dimension: int, horizon: int) -> BonusParams:
        if self.beta is not None:
            return BonusParams(beta=self.beta, c_beta=None, zeta=self.zeta)
        return BonusParams.from_theory(dimension, horizon, horizon * self.episodes, self.c_beta, self.zeta)


@dataclass(eq=False)
class AgentState:
    """Everything the learner carries between episodes.

    committed is the episode whose policy begin_episode last returned.
    values holds (Q^{k-1}, V^{k-1}) as produced by the last end_episode.
    """

    mode: AgentMode
    hyper: HyperParams
    mdp: LinearMDP
    policy: Policy
    values: ValueTables
    accumulators: list[RidgeAccumulator]
    history: HistoryBuffer
    bonus_params: BonusParams
    k: int = 1
    committed: int = 0
    last_evaluation: Evaluation | None = field(default=None, repr=False)

    @property
    def q_prev(self) -> np.ndarray:
        return self.values.q


def zero_values(mdp: LinearMDP) -> ValueTables:
    return ValueTables(
        np.zeros((mdp.horizon, mdp.num_states, mdp.num_actions)),
        np.zeros((mdp.horizon + 1, mdp.num_states)),
    )


def init_agent(mode: AgentMode | str, mdp: LinearMDP, hyper: HyperParams) -> AgentState:
    """pi^0 uniform, Q^0 = 0, empty accumulators, k = 1."""
    mode = AgentMode(mode)
    return AgentState(
        mode=mode,
        hyper=hyper,
        mdp=mdp,
        policy=uniform_policy(mdp.horizon, mdp.num_states, mdp.num_actions),
        values=zero_values(mdp),
        accumulators=make_accumulators(mdp.horizon, mdp.dimension, hyper.lam),
        history=HistoryBuffer(mdp.horizon),
        bonus_params=hyper.bonus_params(mdp.dimension, mdp.horizon),
    )


def begin_episode(state: AgentState) -> Policy:
    """Commit pi^k from pi^{k-1} and Q^{k-1}. Repeated calls for the same k are no-ops."""
    if state.committed == state.k:
        return state.policy

    if state.mode in (AgentMode.OPPO, AgentMode.NO_BONUS, AgentMode.IDEAL_OPPO):
        state.policy = improve_policy(state.policy, state.q_prev, state.hyper.alpha)
    elif state.mode == AgentMode.GREEDY_LSVI:
        state.policy = greedy_policy(state.q_prev)
    # UNIFORM keeps pi^0

    state.committed = state.k
    return state.policy


def end_episode(state: AgentState, trajectory: Trajectory, reward: RewardFunction) -> AgentState:
    """Evaluate pi^k on the revealed r^k, store Q^k, extend the history, advance k.

    Raises:
        ProtocolError: No committed policy for this episode or the trajectory
            belongs to another episode.
    """
    if state.committed != state.k:
        raise ProtocolError(f"end_episode for k={state.k} before begin_episode")
    if trajectory.episode != state.k:
        raise ProtocolError(f"Trajectory is episode {trajectory.episode}, agent expects {state.k}")
    mdp = state.mdp

    if state.mode == AgentMode.UNIFORM:
        state.last_evaluation = None
    elif state.mode == AgentMode.IDEAL_OPPO:
        v, q = exact_policy_value(mdp, state.policy, reward)
        state.values = ValueTables(q, v)
        state.last_evaluation = None
    else:
        params = None if state.mode == AgentMode.NO_BONUS else state.bonus_params
        evaluation = evaluate_policy(
            mdp, state.policy, reward, state.accumulators, params, lazy=state.hyper.lazy_features,
        )
        record_episode(mdp, evaluation, trajectory, state.accumulators, state.history)
        state.values = evaluation.values
        state.last_evaluation = evaluation

    logger.debug("Episode %d done (%s), return %.4f", state.k, state.mode, sum(trajectory.rewards))
    state.k += 1
    return state
