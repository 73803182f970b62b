"""Experiment configuration: registry, validation, resolution and hashing.

Configs are nested JSON documents. Every leaf is addressed by a dotted key
("hyperparams.c_beta") and registered in CONFIG_REGISTRY with its default,
category and an optional validator. Validators return an error message or
None, so validate_config() can report every problem at once.
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from learner.agent import HyperParams
from learner.config import (
    ALPHA_AUTO,
    C_BETA_DEFAULT,
    LAZY_FEATURES_DEFAULT,
    RIDGE_LAMBDA,
    ZETA_DEFAULT,
)
from learner.policy_opt import auto_step_size
from mdp.adversary import AdversaryKind
from mdp.instances import InstanceSpec
from shared.constants import (
    ADVERSARY_KINDS,
    INSTANCE_KINDS,
    NAMED_REWARDS,
    THREADS_ENV_VAR,
    AgentMode,
)
from shared.exceptions import ConfigError
from shared.hashing import sha256_json

logger = logging.getLogger(__name__)


# --- Validators ---

def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool)
            and math.isfinite(value))


def _validate_positive_int(value) -> str | None:
    if not _is_int(value) or value < 1:
        return f"Must be a positive integer, got {value!r}"
    return None


def _validate_optional_positive_int(value) -> str | None:
    return None if value is None else _validate_positive_int(value)


def _validate_seed(value) -> str | None:
    if not _is_int(value) or not 0 <= value < 2**64:
        return f"Must be an integer in [0, 2^64), got {value!r}"
    return None


def _validate_positive_float(value) -> str | None:
    if not _is_number(value) or value <= 0:
        return f"Must be a positive number, got {value!r}"
    return None


def _validate_optional_positive_float(value) -> str | None:
    return None if value is None else _validate_positive_float(value)


def _validate_float_0_1(value) -> str | None:
    if not _is_number(value) or not 0.0 <= value <= 1.0:
        return f"Must be between 0.0 and 1.0, got {value!r}"
    return None


def _validate_zeta(value) -> str | None:
    if not _is_number(value) or not 0.0 < value <= 1.0:
        return f"Must lie in (0, 1], got {value!r}"
    return None


def _validate_alpha(value) -> str | None:
    if value == ALPHA_AUTO:
        return None
    if not _is_number(value) or value < 0:
        return f"Must be '{ALPHA_AUTO}' or a non-negative number, got {value!r}"
    return None


def _validate_bool(value) -> str | None:
    if not isinstance(value, bool):
        return f"Must be true or false, got {value!r}"
    return None


def _validate_optional_str(value) -> str | None:
    if value is not None and not isinstance(value, str):
        return f"Must be a string, got {value!r}"
    return None


def _validate_str(value) -> str | None:
    if not isinstance(value, str) or not value:
        return f"Must be a non-empty string, got {value!r}"
    return None


def _validate_instance_kind(value) -> str | None:
    if value not in INSTANCE_KINDS:
        return f"Invalid instance kind '{value}'. Must be one of: {', '.join(INSTANCE_KINDS)}"
    return None


def _validate_adversary_kind(value) -> str | None:
    if value not in ADVERSARY_KINDS:
        return f"Invalid adversary '{value}'. Must be one of: {', '.join(ADVERSARY_KINDS)}"
    return None


def _validate_modes(value) -> str | None:
    valid = [m.value for m in AgentMode]
    if not isinstance(value, list) or not value:
        return "Must be a non-empty list of agent modes"
    bad = [m for m in value if m not in valid]
    if bad:
        return f"Invalid modes {bad}. Must be drawn from: {', '.join(valid)}"
    if len(set(value)) != len(value):
        return "Modes must not repeat"
    return None


def _validate_seeds(value) -> str | None:
    if not isinstance(value, list) or not value:
        return "Must be a non-empty list of seeds"
    if any(_validate_seed(s) for s in value):
        return f"Seeds must be integers in [0, 2^64), got {value!r}"
    if len(set(value)) != len(value):
        return "Seeds must not repeat"
    return None


def _validate_bases(value) -> str | None:
    """A base is a named generator or a nested (H, S, A) list of rewards."""
    if not isinstance(value, list) or not value:
        return "Must be a non-empty list of reward bases"
    for i, base in enumerate(value):
        if isinstance(base, str):
            if base not in NAMED_REWARDS:
                return f"Base {i}: unknown named reward '{base}'. Must be one of: {', '.join(NAMED_REWARDS)}"
        elif not isinstance(base, list):
            return f"Base {i}: must be a named reward or an (H, S, A) table"
    return None


def _validate_log_level(value) -> str | None:
    valid = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
    if not isinstance(value, str) or value.upper() not in valid:
        return f"Invalid log level '{value}'. Must be one of: {', '.join(valid)}"
    return None


# --- Config Registry ---
# Each entry: dotted key -> (default, category, validator_fn_or_None)

CONFIG_REGISTRY = {
    # Instance
    "instance.kind":            ("tabular-random", "instance", _validate_instance_kind),
    "instance.horizon":         (4, "instance", _validate_positive_int),
    "instance.num_states":      (5, "instance", _validate_positive_int),
    "instance.num_actions":     (3, "instance", _validate_positive_int),
    "instance.d":               (None, "instance", _validate_optional_positive_int),
    "instance.seed":            (0, "instance", _validate_seed),
    "instance.concentration":   (1.0, "instance", _validate_positive_float),
    "instance.reward_value":    (1.0, "instance", _validate_float_0_1),
    "instance.vary_with_seed":  (False, "instance", _validate_bool),
    "instance.path":            (None, "instance", _validate_optional_str),

    # Adversary
    "adversary.kind":           ("fixed", "adversary", _validate_adversary_kind),
    "adversary.period":         (1, "adversary", _validate_positive_int),
    "adversary.strength":       (0.0, "adversary", _validate_float_0_1),
    "adversary.bases":          (["random"], "adversary", _validate_bases),
    "adversary.seed":           (0, "adversary", _validate_seed),

    # Agents
    "modes":                    (["oppo"], "agent", _validate_modes),
    "hyperparams.episodes":     (100, "agent", _validate_positive_int),
    "hyperparams.alpha":        (ALPHA_AUTO, "agent", _validate_alpha),
    "hyperparams.lam":          (RIDGE_LAMBDA, "agent", _validate_positive_float),
    "hyperparams.c_beta":       (C_BETA_DEFAULT, "agent", _validate_positive_float),
    "hyperparams.zeta":         (ZETA_DEFAULT, "agent", _validate_zeta),
    "hyperparams.beta":         (None, "agent", _validate_optional_positive_float),
    "hyperparams.lazy_features": (LAZY_FEATURES_DEFAULT, "agent", _validate_bool),

    # Run
    "seeds":                    ([0], "run", _validate_seeds),
    "master_seed":              (0, "run", _validate_seed),
    "output_dir":               ("runs/default", "run", _validate_str),
    "dump_eval":                (False, "run", _validate_bool),
    "log_level":                ("INFO", "run", _validate_log_level),
}

# Keys that belong to the instance spec only when generating, not loading
_GENERATOR_KEYS = ("kind", "horizon", "num_states", "num_actions", "d",
                   "seed", "concentration", "reward_value")


# --- Dotted-key helpers ---

def flatten(raw: dict, prefix: str = "") -> dict:
    """Nested dict to {dotted_key: leaf}. Sections listed in the registry stay nested."""
    flat = {}
    for key, value in raw.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and dotted not in CONFIG_REGISTRY:
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: dict) -> dict:
    nested: dict = {}
    for dotted, value in flat.items():
        node = nested
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def with_overrides(raw: dict, overrides: dict) -> dict:
    """Copy of raw with dotted-key overrides applied."""
    flat = flatten(copy.deepcopy(raw))
    flat.update(overrides)
    return unflatten(flat)


def resolve_defaults(raw: dict) -> dict:
    """Flat dict of every registry key, config values over defaults."""
    flat = {key: copy.deepcopy(default) for key, (default, _cat, _val) in CONFIG_REGISTRY.items()}
    flat.update(flatten(raw))
    return flat


# --- Validation ---

def validate_config(raw: dict) -> list[str]:
    """Every schema violation in a raw config; empty means valid."""
    if not isinstance(raw, dict):
        return ["Config must be a JSON object"]
    errors = []
    flat = flatten(raw)
    for key in sorted(flat):
        if key not in CONFIG_REGISTRY:
            errors.append(f"{key}: unknown key")
    if errors:
        return errors

    resolved = resolve_defaults(raw)
    for key, (_default, _cat, validator) in CONFIG_REGISTRY.items():
        if validator:
            error = validator(resolved[key])
            if error:
                errors.append(f"{key}: {error}")
    if errors:
        return errors

    if resolved["instance.path"] is None:
        kind = resolved["instance.kind"]
        if kind == "linear-mixture" and resolved["instance.d"] is None:
            errors.append("instance.d: required for linear-mixture instances")
        if kind == "combination-lock" and (resolved["instance.horizon"] < 2 or resolved["instance.num_actions"] < 2):
            errors.append("instance: combination-lock needs horizon >= 2 and num_actions >= 2")
        if kind == "tabular-random" and resolved["instance.d"] is not None:
            expected = resolved["instance.num_states"] ** 2 * resolved["instance.num_actions"]
            if resolved["instance.d"] != expected:
                errors.append(f"instance.d: tabular instances have d = |S|^2 |A| = {expected}")
        if "lock" in resolved["adversary.bases"] and kind != "combination-lock":
            errors.append("adversary.bases: named reward 'lock' needs a combination-lock instance")
    else:
        explicit = [k for k in _GENERATOR_KEYS if f"instance.{k}" in flatten(raw)]
        if explicit:
            errors.append(f"instance: 'path' cannot be combined with {', '.join(explicit)}")
        if resolved["instance.vary_with_seed"]:
            errors.append("instance.vary_with_seed: not available for loaded instances")
    if resolved["adversary.kind"] == "periodic_switch" and len(resolved["adversary.bases"]) < 2:
        logger.warning("periodic_switch with a single base reward behaves like fixed")
    return errors


# --- Resolved config ---

@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated, default-filled experiment config.

    resolved is the flat {dotted_key: value} view that config_hash() digests.
    alpha stays "auto" until the instance is known (see hyperparams()).
    """

    resolved: dict
    instance: InstanceSpec | None
    instance_path: Path | None
    vary_instance_with_seed: bool
    adversary: AdversaryKind
    reward_bases: tuple
    adversary_seed: int
    modes: tuple[AgentMode, ...]
    episodes: int
    alpha: float | str
    lam: float
    c_beta: float
    zeta: float
    beta: float | None
    lazy_features: bool
    seeds: tuple[int, ...]
    master_seed: int
    output_dir: Path
    dump_eval: bool
    log_level: str = field(default="INFO")

    def hyperparams(self, horizon: int, num_actions: int) -> HyperParams:
        """HyperParams with "auto" alpha resolved to sqrt(2 log|A| / (H T)), T = H K."""
        alpha = self.alpha
        if alpha == ALPHA_AUTO:
            alpha = auto_step_size(num_actions, horizon, horizon * self.episodes)
        return HyperParams(
            episodes=self.episodes,
            alpha=float(alpha),
            lam=self.lam,
            c_beta=self.c_beta,
            zeta=self.zeta,
            beta=self.beta,
            lazy_features=self.lazy_features,
        )

    def to_dict(self) -> dict:
        return unflatten(self.resolved)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate and resolve a raw config.

    Raises:
        ConfigError: Listing every schema violation.
    """
    errors = validate_config(raw)
    if errors:
        raise ConfigError("Invalid config:\n  " + "\n  ".join(errors))
    r = resolve_defaults(raw)

    instance = None
    instance_path = None
    if r["instance.path"] is None:
        instance = InstanceSpec(
            kind=r["instance.kind"],
            horizon=r["instance.horizon"],
            num_states=r["instance.num_states"],
            num_actions=r["instance.num_actions"],
            d=r["instance.d"],
            seed=r["instance.seed"],
            concentration=float(r["instance.concentration"]),
            reward_value=float(r["instance.reward_value"]),
        )
    else:
        instance_path = Path(r["instance.path"])

    return ExperimentConfig(
        resolved=r,
        instance=instance,
        instance_path=instance_path,
        vary_instance_with_seed=r["instance.vary_with_seed"],
        adversary=AdversaryKind(r["adversary.kind"], r["adversary.period"], float(r["adversary.strength"])),
        reward_bases=tuple(r["adversary.bases"]),
        adversary_seed=r["adversary.seed"],
        modes=tuple(AgentMode(m) for m in r["modes"]),
        episodes=r["hyperparams.episodes"],
        alpha=r["hyperparams.alpha"],
        lam=float(r["hyperparams.lam"]),
        c_beta=float(r["hyperparams.c_beta"]),
        zeta=float(r["hyperparams.zeta"]),
        beta=None if r["hyperparams.beta"] is None else float(r["hyperparams.beta"]),
        lazy_features=r["hyperparams.lazy_features"],
        seeds=tuple(r["seeds"]),
        master_seed=r["master_seed"],
        output_dir=Path(r["output_dir"]),
        dump_eval=r["dump_eval"],
        log_level=r["log_level"].upper(),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    config = config_from_dict(raw)
    logger.debug("Loaded config %s (hash %s)", path, config_hash(config)[:12])
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the resolved config."""
    return sha256_json(config.resolved)


def worker_count(env: dict[str, str] | None = None) -> int:
    """Parallel (mode, seed) cells: OPPO_LAB_THREADS if set, else the CPU count."""
    env = os.environ if env is None else env
    value = env.get(THREADS_ENV_VAR)
    if value:
        if not value.strip().isdigit() or int(value) < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got '{value}'")
        return int(value)
    return os.cpu_count() or 1


def describe_config(config: ExperimentConfig) -> dict[str, Any]:
    """Short summary for the `validate` subcommand."""
    if config.instance is not None:
        source = {"kind": config.instance.kind, "H": config.instance.horizon,
                  "num_states": config.instance.num_states, "num_actions": config.instance.num_actions}
    else:
        source = {"path": str(config.instance_path)}
    return {
        "config_hash": config_hash(config),
        "instance": source,
        "adversary": config.adversary.kind,
        "modes": [str(m) for m in config.modes],
        "episodes": config.episodes,
        "alpha": config.alpha,
        "seeds": list(config.seeds),
        "output_dir": str(config.output_dir),
    }
