"""Optimistic least-squares policy evaluation.

Per step h the learner keeps a ridge accumulator
    Lambda_h = sum_tau phi_tau phi_tau' + lambda I,   u_h = sum_tau phi_tau v_tau
where phi_tau = sum_x' psi(x_tau, a_tau, x') V^tau_{h+1}(x') and
v_tau = V^tau_{h+1}(x_{tau,h+1}) are frozen at the episode they were observed.
Evaluation runs backward over h, adding the UCB bonus
beta * sqrt(phi' Lambda^-1 phi) and clipping Q to [0, H - h + 1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from learner.config import (
    C_BETA_DEFAULT,
    DRIFT_CHECK_EVERY,
    INVERSE_DRIFT_TOL,
    REFACTOR_EVERY,
    RIDGE_LAMBDA,
    ZETA_DEFAULT,
)
from learner.policy_opt import Policy
from mdp.core import (
    LinearMDP,
    RewardFunction,
    Trajectory,
    feature_expectation,
    feature_expectation_table,
)
from shared.constants import BONUS_RADICAND_TOL
from shared.exceptions import AccumulatorError, ConfigError

logger = logging.getLogger(__name__)


# --- Domain types ---

@dataclass(eq=False)
class RidgeAccumulator:
    """Gram matrix, its maintained inverse and the target vector for one step.

    Single writer: only the episode loop mutates an accumulator.
    """

    dimension: int
    lam: float = RIDGE_LAMBDA
    gram: np.ndarray = field(init=False)
    gram_inv: np.ndarray = field(init=False)
    target: np.ndarray = field(init=False)
    count: int = 0
    since_refactor: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"Ridge regularizer must be positive, got {self.lam}")
        self.gram = self.lam * np.eye(self.dimension)
        self.gram_inv = np.eye(self.dimension) / self.lam
        self.target = np.zeros(self.dimension)

    def drift(self) -> float:
        """Max entrywise |Lambda Lambda^-1 - I|."""
        return float(np.abs(self.gram @ self.gram_inv - np.eye(self.dimension)).max())

    def refactor(self) -> None:
        factor = cho_factor(self.gram)
        self.gram_inv = cho_solve(factor, np.eye(self.dimension))
        self.gram_inv = 0.5 * (self.gram_inv + self.gram_inv.T)
        self.since_refactor = 0


@dataclass
class HistoryBuffer:
    """Append-only (phi, v) pairs per step, in episode order."""

    horizon: int
    features: list[list[np.ndarray]] = field(init=False)
    targets: list[list[float]] = field(init=False)

    def __post_init__(self):
        self.features = [[] for _ in range(self.horizon)]
        self.targets = [[] for _ in range(self.horizon)]

    def append(self, step: int, phi: np.ndarray, value: float) -> None:
        """Record one pair at a 0-based step index."""
        self.features[step].append(np.array(phi, dtype=float))
        self.targets[step].append(float(value))

    def size(self, step: int) -> int:
        return len(self.targets[step])

    def arrays(self, step: int, dimension: int) -> tuple[np.ndarray, np.ndarray]:
        """(n, d) stacked features and (n,) targets for a 0-based step."""
        if not self.targets[step]:
            return np.zeros((0, dimension)), np.zeros(0)
        return np.vstack(self.features[step]), np.asarray(self.targets[step])


@dataclass(frozen=True)
class BonusParams:
    """UCB scale beta, optionally derived as c_beta sqrt(d H^2 log(d T / zeta))."""

    beta: float
    c_beta: float | None = None
    zeta: float = ZETA_DEFAULT

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigError(f"Bonus scale beta must be positive and finite, got {self.beta}")
        if not 0 < self.zeta <= 1:
            raise ConfigError(f"zeta must lie in (0, 1], got {self.zeta}")

    @classmethod
    def from_theory(
        cls,
        dimension: int,
        horizon: int,
        total_steps: int,
        c_beta: float = C_BETA_DEFAULT,
        zeta: float = ZETA_DEFAULT,
    ) -> BonusParams:
        beta = c_beta * math.sqrt(dimension * horizon**2 * math.log(dimension * total_steps / zeta))
        return cls(beta=beta, c_beta=c_beta, zeta=zeta)


@dataclass(eq=False)
class ValueTables:
    """q: (H, S, A) clipped Q. v: (H+1, S) with v[H] = 0."""

    q: np.ndarray
    v: np.ndarray


@dataclass(eq=False)
class Evaluation:
    """Output of one backward evaluation pass plus its diagnostics.

    phi is (H, S, A, d) in table mode and None in lazy mode.
    """

    values: ValueTables
    q_bar: np.ndarray
    bonus: np.ndarray
    weights: np.ndarray
    phi: np.ndarray | None = None


# --- Ridge operations ---

def ridge_rank_one_update(acc: RidgeAccumulator, phi: np.ndarray, value: float) -> RidgeAccumulator:
    """Lambda += phi phi', u += phi v, inverse by Sherman-Morrison.

    A full re-factorization runs every REFACTOR_EVERY updates, and earlier
    whenever a drift check exceeds INVERSE_DRIFT_TOL.
    """
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise AccumulatorError("Feature vector contains non-finite entries")
    if not phi.any():
        return acc

    acc.gram += np.outer(phi, phi)
    acc.target += phi * value
    projected = acc.gram_inv @ phi
    acc.gram_inv -= np.outer(projected, projected) / (1.0 + phi @ projected)
    acc.count += 1
    acc.since_refactor += 1

    if acc.since_refactor >= REFACTOR_EVERY:
        acc.refactor()
    elif acc.since_refactor % DRIFT_CHECK_EVERY == 0:
        drift = acc.drift()
        if drift > INVERSE_DRIFT_TOL:
            logger.debug("Gram inverse drift %.2e after %d updates, re-factorizing",
                         drift, acc.since_refactor)
            acc.refactor()
    return acc


def solve_weights(acc: RidgeAccumulator) -> np.ndarray:
    """w = Lambda^-1 u, the ridge minimizer."""
    return acc.gram_inv @ acc.target


def _radicand(acc: RidgeAccumulator, phis: np.ndarray) -> np.ndarray:
    quad = np.einsum("...d,de,...e->...", phis, acc.gram_inv, phis)
    if (quad < -BONUS_RADICAND_TOL).any():
        raise AccumulatorError(f"Negative bonus radicand {quad.min():.3e}; accumulator corrupted")
    return np.maximum(quad, 0.0)


def bonus(acc: RidgeAccumulator, phi: np.ndarray, beta: float) -> float:
    """beta * sqrt(phi' Lambda^-1 phi)."""
    return float(beta * math.sqrt(_radicand(acc, np.asarray(phi, dtype=float))))


def bonus_table(acc: RidgeAccumulator, phis: np.ndarray, beta: float) -> np.ndarray:
    """bonus for a stack of feature vectors (..., d)."""
    return beta * np.sqrt(_radicand(acc, phis))


def make_accumulators(horizon: int, dimension: int, lam: float = RIDGE_LAMBDA) -> list[RidgeAccumulator]:
    return [RidgeAccumulator(dimension, lam) for _ in range(horizon)]


# --- Evaluation ---

def evaluate_policy(
    mdp: LinearMDP,
    policy: Policy,
    reward: RewardFunction,
    accumulators: list[RidgeAccumulator],
    params: BonusParams | None,
    lazy: bool = False,
) -> Evaluation:
    """Backward optimistic evaluation of the episode's policy.

    Only the feature map of `mdp` is read; theta stays hidden.

    Args:
        mdp: Instance providing the known feature map.
        policy: pi^k, the policy executed this episode.
        reward: r^k, revealed after acting.
        accumulators: Per-step ridge state holding episodes 1..k-1.
        params: Bonus scale; None disables the bonus.
        lazy: Compute phi per (x, a) on demand instead of storing the table.

    Returns:
        Evaluation with clipped Q/V tables, unclipped Q-bar, bonus, weights.
    """
    horizon, num_states, num_actions = mdp.horizon, mdp.num_states, mdp.num_actions
    if len(accumulators) != horizon:
        raise ConfigError(f"Need {horizon} accumulators, got {len(accumulators)}")
    beta = params.beta if params is not None else 0.0
    probs = policy.probs

    q = np.zeros((horizon, num_states, num_actions))
    v = np.zeros((horizon + 1, num_states))
    q_bar = np.zeros_like(q)
    gamma = np.zeros_like(q)
    weights = np.zeros((horizon, mdp.dimension))
    phi_tables = None if lazy else np.zeros((horizon, num_states, num_actions, mdp.dimension))

    for i in reversed(range(horizon)):
        acc = accumulators[i]
        w = solve_weights(acc)
        weights[i] = w
        if lazy:
            for x in range(num_states):
                for a in range(num_actions):
                    phi = feature_expectation(mdp, x, a, v[i + 1])
                    gamma[i, x, a] = bonus(acc, phi, beta) if beta else 0.0
                    q_bar[i, x, a] = reward.table[i, x, a] + phi @ w + gamma[i, x, a]
        else:
            phis = feature_expectation_table(mdp, v[i + 1])
            phi_tables[i] = phis
            if beta:
                gamma[i] = bonus_table(acc, phis, beta)
            q_bar[i] = reward.table[i] + phis @ w + gamma[i]
        ceiling = horizon - i
        q[i] = np.maximum(np.minimum(q_bar[i], ceiling), 0.0)
        v[i] = np.sum(q[i] * probs[i], axis=-1)

    return Evaluation(ValueTables(q, v), q_bar, gamma, weights, phi_tables)


def record_episode(
    mdp: LinearMDP,
    evaluation: Evaluation,
    trajectory: Trajectory,
    accumulators: list[RidgeAccumulator],
    history: HistoryBuffer,
) -> None:
    """Append (phi^k_h(x_h, a_h), V^k_{h+1}(x_{h+1})) for every step."""
    v = evaluation.values.v
    for i, x, a, x_next in trajectory.steps():
        if evaluation.phi is not None:
            phi = evaluation.phi[i, x, a]
        else:
            phi = feature_expectation(mdp, x, a, v[i + 1])
        target = float(v[i + 1, x_next])
        history.append(i, phi, target)
        ridge_rank_one_update(accumulators[i], phi, target)
