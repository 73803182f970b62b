"""Elliptical potential check and the per-term regret envelopes."""

import logging
import math
from collections.abc import Sequence

import numpy as np

logger = logging.getLogger(__name__)


def elliptical_potential_check(features: Sequence[np.ndarray] | np.ndarray, lam: float = 1.0) -> tuple[float, float]:
    """sum_j min{1, phi_j' Lambda_j^-1 phi_j} against 2 log(det Lambda_{t+1} / det Lambda_1).

    Lambda_1 = lam I and Lambda_{j+1} = Lambda_j + phi_j phi_j'. The
    inequality lhs <= rhs holds deterministically for lam >= 1.

    Returns:
        (lhs, rhs).
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.size == 0:
        return 0.0, 0.0
    dimension = features.shape[1]
    gram = lam * np.eye(dimension)
    lhs = 0.0
    for phi in features:
        lhs += min(1.0, float(phi @ np.linalg.solve(gram, phi)))
        gram = gram + np.outer(phi, phi)
    _, logdet_end = np.linalg.slogdet(gram)
    rhs = 2.0 * (logdet_end - dimension * math.log(lam))
    return lhs, float(rhs)


def ideal_regret_bound(horizon: int, episodes: int, num_actions: int, alpha: float) -> float:
    """alpha H^3 K / 2 + H log|A| / alpha, the mirror-descent envelope."""
    return alpha * horizon**3 * episodes / 2.0 + horizon * math.log(num_actions) / alpha


def term_bounds(
    horizon: int,
    episodes: int,
    num_actions: int,
    alpha: float,
    zeta: float,
    bonus_path: np.ndarray | None = None,
) -> dict:
    """Envelopes for the three decomposition terms.

    Args:
        bonus_path: (K, H) realized Gamma^k_h(x^k_h, a^k_h); enables the
            pathwise term (iii) envelope.

    Returns:
        Dict with term_i, term_ii and term_iii (None without bonus_path).
    """
    total_steps = horizon * episodes
    bounds = {
        "term_i": ideal_regret_bound(horizon, episodes, num_actions, alpha) if alpha > 0 else math.inf,
        "term_ii": math.sqrt(16.0 * horizon**2 * total_steps * math.log(4.0 / zeta)),
        "term_iii": None,
    }
    if bonus_path is not None:
        bounds["term_iii"] = float(2.0 * np.minimum(horizon, bonus_path).sum())
    return bounds
