"""Reward adversaries for the full-information episodic protocol.

The adversary commits r^k at the start of episode k and may read only the
trajectories and rewards of episodes 1..k-1. The learner sees the table
after acting, never before.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from mdp.core import RewardFunction, Trajectory, ValidationReport
from shared.constants import ADVERSARY_KINDS
from shared.exceptions import ProtocolError, RewardError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdversaryKind:
    """fixed | periodic_switch(period) | adaptive_avoid(strength)."""

    kind: str = "fixed"
    period: int = 1
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise RewardError(
                f"Unknown adversary '{self.kind}'. Must be one of: {', '.join(ADVERSARY_KINDS)}"
            )
        if self.period < 1:
            raise RewardError(f"Switch period must be >= 1, got {self.period}")
        if not 0.0 <= self.strength <= 1.0:
            raise RewardError(f"Avoidance strength must lie in [0, 1], got {self.strength}")


@dataclass
class History:
    """(Trajectory, RewardFunction) for episodes 1..k-1, contiguous from 1."""

    entries: list[tuple[Trajectory, RewardFunction]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def next_episode(self) -> int:
        return len(self.entries) + 1

    def append(self, trajectory: Trajectory, reward: RewardFunction) -> None:
        if trajectory.episode != self.next_episode:
            raise ProtocolError(
                f"History expects episode {self.next_episode}, got {trajectory.episode}"
            )
        self.entries.append((trajectory, reward))

    def last(self) -> tuple[Trajectory, RewardFunction] | None:
        return self.entries[-1] if self.entries else None


def validate_reward(reward: RewardFunction) -> ValidationReport:
    """List every entry outside [0, 1] (NaN included) with its (h, x, a)."""
    report = ValidationReport(subject="reward")
    table = reward.table
    bad = ~((table >= 0.0) & (table <= 1.0))
    for h, x, a in np.argwhere(bad):
        value = table[h, x, a]
        excess = value - 1.0 if value > 1.0 else -value
        report.add("reward_range", (int(h) + 1, int(x), int(a)), excess)
    report.gate("rewards in [0, 1]", int(bad.sum()), float(np.nan_to_num(table).max(initial=0.0)))
    return report


def visit_frequency(trajectory: Trajectory, num_states: int, num_actions: int) -> np.ndarray:
    """Fraction of the episode's steps spent at each (x, a)."""
    counts = np.zeros((num_states, num_actions))
    for x, a in zip(trajectory.states, trajectory.actions):
        counts[x, a] += 1.0
    return counts / trajectory.horizon


def next_reward(
    kind: AdversaryKind,
    history: History,
    bases: Sequence[RewardFunction],
    rng: np.random.Generator | None = None,
) -> RewardFunction:
    """Commit r^k for episode k = len(history) + 1.

    fixed returns bases[0]; periodic_switch cycles bases every `period`
    episodes; adaptive_avoid subtracts strength times last episode's
    state-action visit frequency from bases[0], clipped to [0, 1]. All
    current kinds are deterministic given the history; rng is accepted for
    randomized schedules.

    Raises:
        RewardError: Empty or invalid bases.
    """
    if not bases:
        raise RewardError("Adversary needs at least one base reward")
    for i, base in enumerate(bases):
        if not validate_reward(base).passed:
            raise RewardError(f"Base reward {i} has entries outside [0, 1]")
    k = history.next_episode

    if kind.kind == "fixed":
        return bases[0]
    if kind.kind == "periodic_switch":
        return bases[((k - 1) // kind.period) % len(bases)]

    base = bases[0]
    previous = history.last()
    if previous is None:
        return base
    _, num_states, num_actions = base.shape
    freq = visit_frequency(previous[0], num_states, num_actions)
    return RewardFunction(np.clip(base.table - kind.strength * freq[None], 0.0, 1.0))
