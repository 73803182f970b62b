"""Agent checkpoints as JSON.

Float arrays are stored as {"shape": [...], "hex": [float.hex, ...]} so a
save/load cycle restores every double bit for bit.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from learner.agent import AgentState, HyperParams
from learner.policy_eval import HistoryBuffer, RidgeAccumulator, ValueTables
from learner.policy_opt import Policy
from mdp.core import LinearMDP
from mdp.instance_io import write_json_atomic
from shared.constants import AgentMode
from shared.exceptions import ProtocolError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "hex": [float(x).hex() for x in arr.ravel()]}


def decode_array(data: dict) -> np.ndarray:
    flat = np.array([float.fromhex(s) for s in data["hex"]], dtype=float)
    return flat.reshape(data["shape"])


def _accumulator_to_dict(acc: RidgeAccumulator) -> dict:
    return {
        "dimension": acc.dimension,
        "lam": float(acc.lam).hex(),
        "gram": encode_array(acc.gram),
        "gram_inv": encode_array(acc.gram_inv),
        "target": encode_array(acc.target),
        "count": acc.count,
        "since_refactor": acc.since_refactor,
    }


def _accumulator_from_dict(data: dict) -> RidgeAccumulator:
    acc = RidgeAccumulator(data["dimension"], float.fromhex(data["lam"]))
    acc.gram = decode_array(data["gram"])
    acc.gram_inv = decode_array(data["gram_inv"])
    acc.target = decode_array(data["target"])
    acc.count = data["count"]
    acc.since_refactor = data["since_refactor"]
    return acc


def checkpoint_to_dict(state: AgentState) -> dict:
    hyper = asdict(state.hyper)
    for key in ("alpha", "lam", "c_beta", "zeta", "beta"):
        if hyper[key] is not None:
            hyper[key] = float(hyper[key]).hex()

    history = []
    for step in range(state.history.horizon):
        features, targets = state.history.arrays(step, state.mdp.dimension)
        history.append({"features": encode_array(features), "targets": encode_array(targets)})

    return {
        "version": CHECKPOINT_VERSION,
        "mode": str(state.mode),
        "k": state.k,
        "committed": state.committed,
        "hyperparams": hyper,
        "logits": encode_array(state.policy.logits),
        "q": encode_array(state.values.q),
        "v": encode_array(state.values.v),
        "accumulators": [_accumulator_to_dict(acc) for acc in state.accumulators],
        "history": history,
    }


def checkpoint_from_dict(data: dict, mdp: LinearMDP) -> AgentState:
    """Restore an AgentState against the instance it was trained on.

    Raises:
        ProtocolError: Unknown version or accumulators that do not fit the instance.
    """
    if data.get("version") != CHECKPOINT_VERSION:
        raise ProtocolError(f"Unsupported checkpoint version {data.get('version')}")
    hyper = dict(data["hyperparams"])
    for key in ("alpha", "lam", "c_beta", "zeta", "beta"):
        if hyper[key] is not None:
            hyper[key] = float.fromhex(hyper[key])
    hyper = HyperParams(**hyper)

    accumulators = [_accumulator_from_dict(a) for a in data["accumulators"]]
    if len(accumulators) != mdp.horizon or any(a.dimension != mdp.dimension for a in accumulators):
        raise ProtocolError("Checkpoint accumulators do not match the instance")

    history = HistoryBuffer(mdp.horizon)
    for step, entry in enumerate(data["history"]):
        features = decode_array(entry["features"])
        for phi, target in zip(features, decode_array(entry["targets"])):
            history.append(step, phi, target)

    return AgentState(
        mode=AgentMode(data["mode"]),
        hyper=hyper,
        mdp=mdp,
        policy=Policy(decode_array(data["logits"])),
        values=ValueTables(decode_array(data["q"]), decode_array(data["v"])),
        accumulators=accumulators,
        history=history,
        bonus_params=hyper.bonus_params(mdp.dimension, mdp.horizon),
        k=data["k"],
        committed=data["committed"],
    )


def save_checkpoint(state: AgentState, path: str | Path) -> Path:
    path = Path(path)
    write_json_atomic(path, checkpoint_to_dict(state))
    logger.info("Checkpoint for %s at k=%d written to %s", state.mode, state.k, path)
    return path


def load_checkpoint(path: str | Path, mdp: LinearMDP) -> AgentState:
    return checkpoint_from_dict(json.loads(Path(path).read_text(encoding="utf-8")), mdp)
