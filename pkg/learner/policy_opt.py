"""KL-regularized policy improvement.

The improvement subproblem max_p <Q(x,.), p> - KL(p || p_prev) / alpha
separates over (h, x) and is solved in closed form by exponential weights:
p' proportional to p_prev * exp(alpha Q). Policies are stored as cumulative
logits so thousands of updates never underflow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr, softmax

from shared.constants import DETERMINISTIC_LOGIT_GAP
from shared.exceptions import PolicyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-step conditional action distributions, stored as logits (H, S, A)."""

    logits: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 3:
            raise PolicyError(f"Policy logits must have shape (H, S, A), got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise PolicyError("Policy logits must be finite")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.logits.shape

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=-1)

    @classmethod
    def from_actions(cls, actions: np.ndarray, num_actions: int) -> Policy:
        """Deterministic policy from an (H, S) table of action indices."""
        actions = np.asarray(actions, dtype=int)
        logits = np.full(actions.shape + (num_actions,), -DETERMINISTIC_LOGIT_GAP)
        np.put_along_axis(logits, actions[..., None], 0.0, axis=-1)
        return cls(logits)

    def to_dict(self) -> dict:
        return {"logits": self.logits.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> Policy:
        return cls(np.asarray(data["logits"], dtype=float))


def uniform_policy(horizon: int, num_states: int, num_actions: int) -> Policy:
    return Policy(np.zeros((horizon, num_states, num_actions)))


def greedy_policy(q_table: np.ndarray) -> Policy:
    """Deterministic argmax policy of Q; ties go to the lowest action index."""
    q_table = np.asarray(q_table, dtype=float)
    return Policy.from_actions(np.argmax(q_table, axis=-1), q_table.shape[-1])


def auto_step_size(num_actions: int, horizon: int, total_steps: int) -> float:
    """alpha = sqrt(2 log|A| / (H T))."""
    return math.sqrt(2.0 * math.log(num_actions) / (horizon * total_steps))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0 log 0 = 0.

    Raises:
        PolicyError: p puts mass where q has none.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise PolicyError(f"Distributions differ in length: {p.shape} vs {q.shape}")
    terms = rel_entr(p, q)
    if not np.all(np.isfinite(terms)):
        raise PolicyError("KL divergence is infinite: support(p) not contained in support(q)")
    return float(max(terms.sum(), 0.0))


def regularized_gain(q_row: np.ndarray, p: np.ndarray, p_prev: np.ndarray, alpha: float) -> float:
    """<q_row, p> - KL(p || p_prev) / alpha for one (h, x) row."""
    if not alpha > 0:
        raise PolicyError(f"Step size must be positive, got {alpha}")
    return float(np.dot(q_row, p)) - kl_divergence(p, p_prev) / alpha


def improve_policy(prev: Policy, q_table: np.ndarray, alpha: float) -> Policy:
    """Exponential-weights step: logits + alpha Q, re-centred at the row max.

    The resulting distribution is pi'(.|x) proportional to pi(.|x) exp(alpha Q(x,.)).
    """
    q_table = np.asarray(q_table, dtype=float)
    if q_table.shape != prev.shape:
        raise PolicyError(f"Q table {q_table.shape} does not match policy {prev.shape}")
    if not np.all(np.isfinite(q_table)):
        raise PolicyError("Q table contains non-finite entries")
    if alpha < 0 or not math.isfinite(alpha):
        raise PolicyError(f"Step size must be finite and >= 0, got {alpha}")
    logits = prev.logits + alpha * q_table
    return Policy(logits - logits.max(axis=-1, keepdims=True))
