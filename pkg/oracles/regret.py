"""Regret against the hindsight-optimal policy and its exact decomposition.

For every episode,
    V*_1 - V^{pi_k}_1 = (i) + (ii) + (iii)
with (i) the mirror-descent term under pi*'s occupancy, (ii) the sum of the
martingale differences D_{k,h,1} + D_{k,h,2} along the realized trajectory and
(iii) the model-prediction-error gap. The identity is algebraic for any Q^k
with V^k = <Q^k, pi^k>, so its residual measures float error only.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from learner.policy_eval import HistoryBuffer
from learner.policy_opt import Policy
from mdp.core import LinearMDP, RewardFunction, Trajectory, feature_expectation_table
from oracles.values import exact_policy_value, hindsight_optimal_policy, occupancy
from shared.constants import OPTIMISM_TOL

logger = logging.getLogger(__name__)


@dataclass
class RegretRecord:
    k: int
    v_star: float
    v_policy: float
    inst_regret: float
    cum_regret: float
    term_i: float = math.nan
    term_ii: float = math.nan
    term_iii: float = math.nan
    residual: float = math.nan


@dataclass(eq=False)
class PredictionErrorTable:
    """iota = r + P V_{h+1} - Q, with optional unclipped and bonus companions."""

    iota: np.ndarray
    iota_unclipped: np.ndarray | None = None
    bonus: np.ndarray | None = None

    def max_abs(self) -> float:
        return float(np.abs(self.iota).max())


@dataclass(eq=False)
class EpisodeArtifacts:
    """What the learner produced in episode k: pi^k, Q^k, V^k and the trajectory."""

    policy: Policy
    q: np.ndarray
    v: np.ndarray
    trajectory: Trajectory


@dataclass(eq=False)
class DecompositionTerms:
    k: int
    term_i: float
    term_ii: float
    term_iii: float
    d1: np.ndarray
    d2: np.ndarray
    residual: float


def regret(
    mdp: LinearMDP,
    rewards: Sequence[RewardFunction],
    policies: Sequence[Policy],
    pi_star: Policy | None = None,
) -> list[RegretRecord]:
    """Per-episode and cumulative regret against the hindsight optimum.

    Decomposition fields stay NaN; decomposition_terms fills them.
    """
    if len(rewards) != len(policies):
        raise ValueError(f"Got {len(rewards)} rewards but {len(policies)} policies")
    if pi_star is None:
        pi_star = hindsight_optimal_policy(mdp, rewards)

    x1 = mdp.initial_state
    records: list[RegretRecord] = []
    cumulative = 0.0
    for k, (reward, policy) in enumerate(zip(rewards, policies), start=1):
        v_star = exact_policy_value(mdp, pi_star, reward)[0][0, x1]
        v_policy = exact_policy_value(mdp, policy, reward)[0][0, x1]
        gap = float(v_star - v_policy)
        cumulative += gap
        records.append(RegretRecord(k, float(v_star), float(v_policy), gap, cumulative))
    return records


def prediction_error_table(
    mdp: LinearMDP,
    reward: RewardFunction,
    q: np.ndarray,
    v: np.ndarray,
    q_bar: np.ndarray | None = None,
    bonus: np.ndarray | None = None,
) -> PredictionErrorTable:
    """iota_h = r_h + P_h V_{h+1} - Q_h with the true P.

    Args:
        q: (H, S, A) learner Q.
        v: (H+1, S) learner V with v[H] = 0.
        q_bar: Unclipped Q; adds iota_unclipped = r + P V - Q_bar.
        bonus: Gamma table carried alongside for the optimism check.
    """
    backup = reward.table + np.einsum("hxay,hy->hxa", mdp.transitions, v[1:])
    unclipped = backup - q_bar if q_bar is not None else None
    return PredictionErrorTable(backup - q, unclipped, bonus)


def optimism_counts(table: PredictionErrorTable) -> tuple[int, int]:
    """(points with iota > tol, points with iota <= tol but iota < -2 Gamma - tol)."""
    above = table.iota > OPTIMISM_TOL
    below = 0
    if table.bonus is not None:
        below = int((~above & (table.iota < -2.0 * table.bonus - OPTIMISM_TOL)).sum())
    return int(above.sum()), below


def decomposition_terms(
    mdp: LinearMDP,
    rewards: Sequence[RewardFunction],
    episodes: Sequence[EpisodeArtifacts],
    pi_star: Policy | None = None,
) -> list[DecompositionTerms]:
    """Terms (i), (ii), (iii) per episode plus the identity residual.

    Expectations under pi* use its exact occupancy; term (ii) is the sum of
    D_{k,h,1} + D_{k,h,2} along the realized trajectory.
    """
    if len(rewards) != len(episodes):
        raise ValueError(f"Got {len(rewards)} rewards but {len(episodes)} episodes")
    if pi_star is None:
        pi_star = hindsight_optimal_policy(mdp, rewards)

    kernel = mdp.transitions
    x1 = mdp.initial_state
    star_probs = pi_star.probs
    star_visits = occupancy(mdp, pi_star)
    star_states = star_visits.sum(axis=-1)

    out: list[DecompositionTerms] = []
    for k, (reward, art) in enumerate(zip(rewards, episodes), start=1):
        probs = art.policy.probs
        term_i = float(np.einsum("hx,hxa->", star_states, art.q * (star_probs - probs)))

        iota = prediction_error_table(mdp, reward, art.q, art.v).iota
        v_pi, q_pi = exact_policy_value(mdp, art.policy, reward)
        dq = art.q - q_pi
        dv = art.v - v_pi

        d1 = np.zeros(mdp.horizon)
        d2 = np.zeros(mdp.horizon)
        on_path = 0.0
        for i, x, a, x_next in art.trajectory.steps():
            d1[i] = dq[i, x] @ probs[i, x] - dq[i, x, a]
            d2[i] = kernel[i, x, a] @ dv[i + 1] - dv[i + 1, x_next]
            on_path += iota[i, x, a]
        term_ii = float(d1.sum() + d2.sum())
        term_iii = float(np.sum(star_visits * iota) - on_path)

        v_star = exact_policy_value(mdp, pi_star, reward)[0][0, x1]
        gap = float(v_star - v_pi[0, x1])
        residual = gap - (term_i + term_ii + term_iii)
        out.append(DecompositionTerms(k, term_i, term_ii, term_iii, d1, d2, residual))
    return out


def fill_decomposition(records: list[RegretRecord], terms: Sequence[DecompositionTerms]) -> list[RegretRecord]:
    for record, t in zip(records, terms):
        record.term_i, record.term_ii, record.term_iii = t.term_i, t.term_ii, t.term_iii
        record.residual = record.inst_regret - (t.term_i + t.term_ii + t.term_iii)
    return records


def implicit_transition_apply(
    mdp: LinearMDP,
    history: HistoryBuffer,
    h: int,
    values: np.ndarray,
    lam: float,
) -> np.ndarray:
    """(P-hat_{k,h} V)(x, a) = phi_V(x, a)' Lambda^-1 sum_tau phi_tau v_tau.

    Lambda is rebuilt from the buffer and solved directly, independent of the
    learner's maintained inverse.

    Args:
        h: 1-based step.
        values: V over states defining phi_V.
        lam: Ridge regularizer.

    Returns:
        (S, A) table.
    """
    features, targets = history.arrays(h - 1, mdp.dimension)
    gram = lam * np.eye(mdp.dimension) + features.T @ features
    weights = np.linalg.solve(gram, features.T @ targets)
    return feature_expectation_table(mdp, values) @ weights
