"""Benchmark instances: random tabular MDPs, combination locks, linear mixtures.

Generation is a pure function of the InstanceSpec (seed included).
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from mdp.core import FeatureMap, FiniteSpace, LinearMDP, RewardFunction, tabular_to_linear
from shared.constants import INSTANCE_KINDS, NAMED_REWARDS
from shared.exceptions import InstanceError, RewardError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InstanceSpec:
    """Sizes and knobs for a generated instance.

    d is derived (|S|^2 |A|) for tabular and lock kinds and required for
    linear-mixture. For combination-lock, num_states is derived as H + 2.
    """

    kind: str
    horizon: int
    num_states: int = 0
    num_actions: int = 2
    d: int | None = None
    seed: int = 0
    concentration: float = 1.0
    reward_value: float = 1.0

    def __post_init__(self):
        if self.kind not in INSTANCE_KINDS:
            raise InstanceError(
                f"Unknown instance kind '{self.kind}'. Must be one of: {', '.join(INSTANCE_KINDS)}"
            )
        if self.horizon < 1 or self.num_actions < 1:
            raise InstanceError("Horizon and action count must be positive")
        if self.kind != "combination-lock" and self.num_states < 1:
            raise InstanceError("num_states must be positive")
        if self.kind == "tabular-random" and self.d not in (None, self.num_states**2 * self.num_actions):
            raise InstanceError(f"Tabular instances have d = |S|^2 |A|, got d={self.d}")
        if self.kind == "linear-mixture" and (self.d is None or self.d < 1):
            raise InstanceError("linear-mixture instances need a positive d")
        if self.concentration <= 0:
            raise InstanceError(f"Dirichlet concentration must be positive, got {self.concentration}")

    def with_seed(self, seed: int) -> "InstanceSpec":
        return InstanceSpec(**{**asdict(self), "seed": seed})


def random_tabular(spec: InstanceSpec) -> LinearMDP:
    """Dirichlet(concentration) transition rows embedded as a linear MDP."""
    rng = np.random.default_rng(spec.seed)
    rows = rng.dirichlet(
        np.full(spec.num_states, spec.concentration),
        size=(spec.horizon, spec.num_states, spec.num_actions),
    )
    return tabular_to_linear(rows)


def combination_lock(
    horizon: int,
    num_actions: int,
    reward_value: float = 1.0,
    seed: int = 0,
) -> tuple[LinearMDP, RewardFunction]:
    """Chain s_0..s_H plus an absorbing trap; one action sequence pays.

    At step h the seed-drawn correct action moves s_j to s_{j+1}; any other
    action falls into the trap. Only r_H(s_{H-1}, correct_H) = reward_value.

    Returns:
        (mdp, reward) with |S| = H + 2, the trap being state H + 1.
    """
    if horizon < 2 or num_actions < 2:
        raise InstanceError("Combination lock needs H >= 2 and |A| >= 2")
    if not 0.0 <= reward_value <= 1.0:
        raise RewardError(f"Lock reward must lie in [0, 1], got {reward_value}")

    rng = np.random.default_rng(seed)
    combination = rng.integers(num_actions, size=horizon)
    num_states = horizon + 2
    trap = horizon + 1

    kernel = np.zeros((horizon, num_states, num_actions, num_states))
    for i in range(horizon):
        for j in range(horizon + 1):
            kernel[i, j, :, trap] = 1.0
            kernel[i, j, combination[i], trap] = 0.0
            kernel[i, j, combination[i], min(j + 1, horizon)] = 1.0
        kernel[i, trap, :, trap] = 1.0

    table = np.zeros((horizon, num_states, num_actions))
    table[horizon - 1, horizon - 1, combination[horizon - 1]] = reward_value
    logger.debug("Combination lock H=%d |A|=%d combination=%s", horizon, num_actions, combination.tolist())
    return tabular_to_linear(kernel), RewardFunction(table)


def random_linear(spec: InstanceSpec) -> LinearMDP:
    """theta-weighted mixture of d Dirichlet base kernels.

    psi(x, a, x') = (q_1(x'|x,a), ..., q_d(x'|x,a)) and theta_h lies on the
    simplex, so ||theta_h|| <= 1 <= sqrt(d) and ||sum psi V|| <= sqrt(d) H.
    """
    rng = np.random.default_rng(spec.seed)
    kernels = rng.dirichlet(
        np.full(spec.num_states, spec.concentration),
        size=(spec.d, spec.num_states, spec.num_actions),
    )
    theta = rng.dirichlet(np.ones(spec.d), size=spec.horizon)
    return LinearMDP(
        horizon=spec.horizon,
        states=FiniteSpace(spec.num_states),
        actions=FiniteSpace(spec.num_actions),
        features=FeatureMap("mixture", np.moveaxis(kernels, 0, -1), kernels=kernels),
        theta=theta,
    )


def build_instance(spec: InstanceSpec) -> tuple[LinearMDP, RewardFunction | None]:
    """Dispatch on spec.kind. The reward is the lock reward for locks, else None."""
    if spec.kind == "tabular-random":
        return random_tabular(spec), None
    if spec.kind == "combination-lock":
        return combination_lock(spec.horizon, spec.num_actions, spec.reward_value, spec.seed)
    return random_linear(spec), None


def named_reward(
    name: str,
    mdp: LinearMDP,
    rng: np.random.Generator,
    lock_reward: RewardFunction | None = None,
) -> RewardFunction:
    """Reward generators addressable by name in experiment configs."""
    shape = (mdp.horizon, mdp.num_states, mdp.num_actions)
    if name == "random":
        return RewardFunction(rng.uniform(0.0, 1.0, size=shape))
    if name == "zeros":
        return RewardFunction(np.zeros(shape))
    if name == "ones":
        return RewardFunction(np.ones(shape))
    if name == "lock":
        if lock_reward is None:
            raise RewardError("Named reward 'lock' needs a combination-lock instance")
        return lock_reward
    raise RewardError(f"Unknown named reward '{name}'. Must be one of: {', '.join(NAMED_REWARDS)}")
