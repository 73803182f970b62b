"""Linear MDPs over finite state and action spaces.

Transitions are linear in a known feature tensor: P_h(x'|x,a) = psi(x,a,x')' theta_h.
psi is stored densely with shape (S, A, S, d), so every integral over next
states becomes a finite sum.

Public operations that take a step argument `h` expect it 1-based
(1 <= h <= H). Arrays are 0-based along the step axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Iterator

import numpy as np

from shared.constants import (
    FEATURE_KINDS,
    NONNEGATIVE_TOL,
    STOCHASTIC_TOL,
    THETA_NORM_TOL,
)
from shared.exceptions import InstanceError, RewardError

if TYPE_CHECKING:
    from learner.policy_opt import Policy

logger = logging.getLogger(__name__)


# --- Domain types ---

@dataclass(frozen=True)
class FiniteSpace:
    """Dense index set 0..cardinality-1."""

    cardinality: int

    def __post_init__(self):
        if int(self.cardinality) < 1:
            raise InstanceError(f"Space cardinality must be >= 1, got {self.cardinality}")

    def __len__(self) -> int:
        return self.cardinality

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.cardinality))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Known feature map psi(x, a, x') -> R^d.

    Attributes:
        kind: One of FEATURE_KINDS; decides how the map is serialized.
        tensor: Dense (S, A, S, d) array, read-only.
        kernels: Base kernels (m, S, A, S) for the mixture kind, else None.
    """

    kind: str
    tensor: np.ndarray
    kernels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise InstanceError(
                f"Unknown feature kind '{self.kind}'. Must be one of: {', '.join(FEATURE_KINDS)}"
            )
        tensor = np.array(self.tensor, dtype=float)
        if tensor.ndim != 4 or tensor.shape[0] != tensor.shape[2]:
            raise InstanceError(f"Feature tensor must have shape (S, A, S, d), got {tensor.shape}")
        if not np.all(np.isfinite(tensor)):
            raise InstanceError("Feature tensor contains non-finite entries")
        tensor.setflags(write=False)
        object.__setattr__(self, "tensor", tensor)

    @property
    def dimension(self) -> int:
        return self.tensor.shape[-1]

    def __call__(self, x: int, a: int, x_next: int) -> np.ndarray:
        return self.tensor[x, a, x_next]


@dataclass(frozen=True, eq=False)
class LinearMDP:
    """Episodic linear MDP with a fixed initial state.

    Attributes:
        horizon: Steps per episode H.
        states: State space S.
        actions: Action space A.
        features: Known feature map psi.
        theta: (H, d) per-step transition parameters.
        initial_state: x_1, identical in every episode.
    """

    horizon: int
    states: FiniteSpace
    actions: FiniteSpace
    features: FeatureMap
    theta: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise InstanceError(f"Horizon must be >= 1, got {self.horizon}")
        s, a, s_next, d = self.features.tensor.shape
        if (s, a) != (len(self.states), len(self.actions)) or s_next != s:
            raise InstanceError(
                f"Feature tensor {self.features.tensor.shape} does not match "
                f"|S|={len(self.states)}, |A|={len(self.actions)}"
            )
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.horizon, d):
            raise InstanceError(f"theta must have shape ({self.horizon}, {d}), got {theta.shape}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if not 0 <= self.initial_state < s:
            raise InstanceError(f"Initial state {self.initial_state} outside 0..{s - 1}")

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def dimension(self) -> int:
        return self.features.dimension

    @cached_property
    def raw_transitions(self) -> np.ndarray:
        """(H, S, A, S) array of psi' theta_h before any cleaning."""
        return np.einsum("xayd,hd->hxay", self.features.tensor, self.theta)

    @cached_property
    def transitions(self) -> np.ndarray:
        """(H, S, A, S) validated transition tensor.

        Raises:
            InstanceError: If any row is not a distribution within tolerance.
        """
        cleaned = _clean_rows(self.raw_transitions)
        cleaned.setflags(write=False)
        return cleaned


@dataclass(frozen=True, eq=False)
class RewardFunction:
    """Per-step reward tables r_h(x, a), shape (H, S, A).

    Range is not enforced here; adversary.validate_reward reports it.
    """

    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        if table.ndim != 3:
            raise RewardError(f"Reward table must have shape (H, S, A), got {table.shape}")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, horizon: int, num_states: int, num_actions: int, value: float) -> RewardFunction:
        return cls(np.full((horizon, num_states, num_actions), float(value)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.table.shape


@dataclass(frozen=True)
class Trajectory:
    """One realized episode: x_1..x_{H+1}, a_1..a_H, r_1..r_H."""

    episode: int
    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) + 1 == len(self.rewards) + 1):
            raise InstanceError(
                f"Trajectory lengths inconsistent: {len(self.states)} states, "
                f"{len(self.actions)} actions, {len(self.rewards)} rewards"
            )

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def steps(self) -> Iterator[tuple[int, int, int, int]]:
        """Yield (step_index, x_h, a_h, x_{h+1}) with a 0-based step index."""
        for i, a in enumerate(self.actions):
            yield i, self.states[i], a, self.states[i + 1]


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    magnitude: float


@dataclass
class ValidationReport:
    """Violations are data: an empty list means the object is valid."""

    subject: str
    violations: list[Violation] = field(default_factory=list)
    checks: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, kind: str, location: tuple, magnitude: float) -> None:
        self.violations.append(Violation(kind, location, float(magnitude)))

    def gate(self, name: str, count: int, worst: float) -> None:
        if count == 0:
            self.checks.append(f"PASS: {name}")
        else:
            self.checks.append(f"FAIL: {name}: {count} violations, worst {worst:.3e}")

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


# --- Row cleaning ---

def _clean_rows(raw: np.ndarray) -> np.ndarray:
    """Clamp float-noise negatives to 0 and renormalize the last axis.

    Rows already exactly stochastic are returned unchanged, bit for bit.

    Raises:
        InstanceError: Negative mass below -NONNEGATIVE_TOL or a row sum off
            by more than STOCHASTIC_TOL.
    """
    lowest = raw.min(axis=-1)
    if (lowest < -NONNEGATIVE_TOL).any():
        where = tuple(int(i) for i in np.argwhere(lowest < -NONNEGATIVE_TOL)[0])
        raise InstanceError(f"Negative transition mass {lowest[where]:.3e} at {where}")
    sums = raw.sum(axis=-1)
    deviation = np.abs(sums - 1.0)
    if (deviation > STOCHASTIC_TOL).any():
        where = tuple(int(i) for i in np.argwhere(deviation > STOCHASTIC_TOL)[0])
        raise InstanceError(f"Transition row sums to {sums[where]:.12f} at {where}")

    clamped = np.maximum(raw, 0.0)
    totals = clamped.sum(axis=-1, keepdims=True)
    touched = (raw < 0.0).any(axis=-1, keepdims=True) | (totals != 1.0)
    return np.where(touched, clamped / totals, clamped)


# --- Operations ---

def validate_linear_mdp(mdp: LinearMDP, v_samples: int = 32, rng_seed: int = 0) -> ValidationReport:
    """Check every linear-MDP invariant and report violations with locations.

    The feature-integral bound ||sum_x' psi(x,a,x') V(x')|| <= sqrt(d) H is
    checked exactly for V = H and V = 0 and on v_samples random V with
    entries uniform in [0, H]; it is sampled, not certified.

    Args:
        mdp: Instance to validate.
        v_samples: Number of random value functions for the norm bound.
        rng_seed: Seed for the random value functions.

    Returns:
        ValidationReport; locations are (h, x, a) with h 1-based, None where
        an axis does not apply.
    """
    report = ValidationReport(subject="linear_mdp")
    horizon, d = mdp.horizon, mdp.dimension
    raw = mdp.raw_transitions

    lowest = raw.min(axis=-1)
    negative = np.argwhere(lowest < -NONNEGATIVE_TOL)
    for h, x, a in negative:
        report.add("negative_mass", (int(h) + 1, int(x), int(a)), -lowest[h, x, a])
    report.gate("transition entries >= -1e-12", len(negative),
                float(-lowest.min()) if len(negative) else 0.0)

    deviation = np.abs(raw.sum(axis=-1) - 1.0)
    off = np.argwhere(deviation > STOCHASTIC_TOL)
    for h, x, a in off:
        report.add("row_sum", (int(h) + 1, int(x), int(a)), deviation[h, x, a])
    report.gate("transition rows sum to 1", len(off), float(deviation.max()))

    theta_norms = np.linalg.norm(mdp.theta, axis=1)
    norm_limit = np.sqrt(d) + THETA_NORM_TOL
    heavy = np.flatnonzero(theta_norms > norm_limit)
    for h in heavy:
        report.add("theta_norm", (int(h) + 1, None, None), theta_norms[h] - np.sqrt(d))
    report.gate("||theta_h|| <= sqrt(d)", len(heavy), float(theta_norms.max() - np.sqrt(d)))

    rng = np.random.default_rng(rng_seed)
    test_values = np.vstack([
        np.full(mdp.num_states, float(horizon)),
        np.zeros(mdp.num_states),
        rng.uniform(0.0, horizon, size=(v_samples, mdp.num_states)),
    ])
    integrals = np.einsum("xayd,ny->nxad", mdp.features.tensor, test_values)
    worst = np.linalg.norm(integrals, axis=-1).max(axis=0)
    limit = np.sqrt(d) * horizon
    loose = np.argwhere(worst > limit + THETA_NORM_TOL)
    for x, a in loose:
        report.add("feature_integral_norm", (None, int(x), int(a)), worst[x, a] - limit)
    report.gate("||sum psi V|| <= sqrt(d) H", len(loose), float(worst.max() - limit))

    if report.passed:
        logger.debug("Linear MDP valid: H=%d |S|=%d |A|=%d d=%d",
                     horizon, mdp.num_states, mdp.num_actions, d)
    else:
        logger.info("Linear MDP has %d violations across %s",
                    len(report.violations), sorted(report.kinds()))
    return report


def transition_distribution(mdp: LinearMDP, h: int, x: int, a: int) -> np.ndarray:
    """Next-state distribution P_h(.|x, a) for a 1-based step h.

    Raises:
        InstanceError: Step out of range or an invalid row.
    """
    if not 1 <= h <= mdp.horizon:
        raise InstanceError(f"Step h={h} outside 1..{mdp.horizon}")
    raw = mdp.features.tensor[x, a] @ mdp.theta[h - 1]
    try:
        return _clean_rows(raw)
    except InstanceError as e:
        raise InstanceError(f"Invalid transition row at (h={h}, x={x}, a={a}): {e}") from e


def feature_expectation(mdp: LinearMDP, x: int, a: int, values: np.ndarray) -> np.ndarray:
    """sum_x' psi(x, a, x') V(x'), a length-d vector."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mdp.num_states,):
        raise ValueError(f"V must have shape ({mdp.num_states},), got {values.shape}")
    return values @ mdp.features.tensor[x, a]


def feature_expectation_table(mdp: LinearMDP, values: np.ndarray) -> np.ndarray:
    """feature_expectation for every (x, a) at once, shape (S, A, d)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mdp.num_states,):
        raise ValueError(f"V must have shape ({mdp.num_states},), got {values.shape}")
    return np.einsum("xayd,y->xad", mdp.features.tensor, values)


def tabular_to_linear(transitions: np.ndarray, initial_state: int = 0) -> LinearMDP:
    """Embed a tabular MDP as a linear MDP with d = |S|^2 |A|.

    psi(x, a, x') is the canonical basis vector e_(x,a,x') and theta_h is
    P_h flattened in (x, a, x') order.

    Args:
        transitions: (H, S, A, S) stochastic tables.
        initial_state: x_1.

    Raises:
        InstanceError: Non-stochastic rows or a malformed shape.
    """
    table = np.asarray(transitions, dtype=float)
    if table.ndim != 4 or table.shape[1] != table.shape[3]:
        raise InstanceError(f"Tabular transitions must have shape (H, S, A, S), got {table.shape}")
    _clean_rows(table)

    horizon, num_states, num_actions, _ = table.shape
    d = num_states * num_states * num_actions
    psi = np.eye(d).reshape(num_states, num_actions, num_states, d)
    return LinearMDP(
        horizon=horizon,
        states=FiniteSpace(num_states),
        actions=FiniteSpace(num_actions),
        features=FeatureMap("tabular", psi),
        theta=table.reshape(horizon, d),
        initial_state=initial_state,
    )


def run_episode(
    mdp: LinearMDP,
    policy: Policy,
    reward: RewardFunction,
    rng: np.random.Generator,
    episode: int = 1,
) -> Trajectory:
    """Simulate one episode from x_1 under the policy.

    Actions are drawn from pi_h(.|x_h), next states from P_h(.|x_h, a_h),
    and the realized reward r_h(x_h, a_h) is read after each action.
    """
    probs = policy.probs
    expected = (mdp.horizon, mdp.num_states, mdp.num_actions)
    if probs.shape != expected or reward.shape != expected:
        raise InstanceError(
            f"Policy {probs.shape} / reward {reward.shape} do not match instance {expected}"
        )
    kernel = mdp.transitions

    states = [mdp.initial_state]
    actions: list[int] = []
    rewards: list[float] = []
    for i in range(mdp.horizon):
        x = states[-1]
        a = int(rng.choice(mdp.num_actions, p=probs[i, x]))
        actions.append(a)
        rewards.append(float(reward.table[i, x, a]))
        states.append(int(rng.choice(mdp.num_states, p=kernel[i, x, a])))
    return Trajectory(episode, tuple(states), tuple(actions), tuple(rewards))
