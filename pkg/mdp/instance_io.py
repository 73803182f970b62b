"""JSON instance files.

Format: {H, num_states, num_actions, d, feature_kind, theta, features,
initial_state}. The features payload depends on the kind: null for tabular
(the canonical basis is rebuilt), {"kernels": [...]} for mixture and
{"tensor": [...]} for explicit.
"""

import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from mdp.core import FeatureMap, FiniteSpace, LinearMDP
from shared.exceptions import InstanceError

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("H", "num_states", "num_actions", "d", "feature_kind", "theta", "initial_state")


def instance_to_dict(mdp: LinearMDP) -> dict:
    kind = mdp.features.kind
    if kind == "tabular":
        payload = None
    elif kind == "mixture":
        payload = {"kernels": mdp.features.kernels.tolist()}
    else:
        payload = {"tensor": mdp.features.tensor.tolist()}
    return {
        "H": mdp.horizon,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "d": mdp.dimension,
        "feature_kind": kind,
        "theta": mdp.theta.tolist(),
        "features": payload,
        "initial_state": mdp.initial_state,
    }


def instance_from_dict(data: dict) -> LinearMDP:
    """Rebuild a LinearMDP; shapes are checked against the declared sizes.

    Raises:
        InstanceError: Missing fields or inconsistent shapes.
    """
    missing = [f for f in REQUIRED_FIELDS if f not in data]
    if missing:
        raise InstanceError(f"Instance file missing fields: {', '.join(missing)}")

    num_states, num_actions, d = int(data["num_states"]), int(data["num_actions"]), int(data["d"])
    kind = data["feature_kind"]
    payload = data.get("features") or {}

    kernels = None
    if kind == "tabular":
        if d != num_states * num_states * num_actions:
            raise InstanceError(f"Tabular instance declares d={d}, expected {num_states**2 * num_actions}")
        tensor = np.eye(d).reshape(num_states, num_actions, num_states, d)
    elif kind == "mixture":
        kernels = np.asarray(payload.get("kernels"), dtype=float)
        if kernels.shape != (d, num_states, num_actions, num_states):
            raise InstanceError(f"Mixture kernels have shape {kernels.shape}")
        tensor = np.moveaxis(kernels, 0, -1)
    elif kind == "explicit":
        tensor = np.asarray(payload.get("tensor"), dtype=float)
        if tensor.shape != (num_states, num_actions, num_states, d):
            raise InstanceError(f"Explicit feature tensor has shape {tensor.shape}")
    else:
        raise InstanceError(f"Unknown feature kind '{kind}'")

    return LinearMDP(
        horizon=int(data["H"]),
        states=FiniteSpace(num_states),
        actions=FiniteSpace(num_actions),
        features=FeatureMap(kind, tensor, kernels=kernels),
        theta=np.asarray(data["theta"], dtype=float),
        initial_state=int(data["initial_state"]),
    )


def write_json_atomic(path: Path, payload: dict) -> None:
    """Write UTF-8 JSON with LF endings through a temp file and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_instance(mdp: LinearMDP, path: str | Path) -> Path:
    path = Path(path)
    write_json_atomic(path, instance_to_dict(mdp))
    logger.info("Saved %s instance (H=%d, |S|=%d, |A|=%d, d=%d) to %s",
                mdp.features.kind, mdp.horizon, mdp.num_states, mdp.num_actions, mdp.dimension, path)
    return path


def load_instance(path: str | Path) -> LinearMDP:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InstanceError(f"Cannot read instance file {path}: {e}") from e
    return instance_from_dict(data)
