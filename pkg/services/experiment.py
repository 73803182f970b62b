"""Experiment runner: (mode, seed) cells, regret measurement, run logs.

A cell simulates K episodes under the adversary protocol, then measures
regret against the hindsight-optimal policy of the realized reward sequence
and decomposes it term by term. Cells run in a thread pool and are merged in
(mode, seed) order; nothing is written until every cell has finished and
passed the decomposition residual check.
"""

import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from learner.agent import AgentState, HyperParams, begin_episode, end_episode, init_agent
from mdp.adversary import AdversaryKind, History, next_reward, validate_reward
from mdp.core import LinearMDP, RewardFunction, run_episode, validate_linear_mdp
from mdp.instance_io import instance_to_dict, load_instance, write_json_atomic
from mdp.instances import build_instance, named_reward
from oracles.potential import elliptical_potential_check, ideal_regret_bound, term_bounds
from oracles.regret import (
    EpisodeArtifacts,
    RegretRecord,
    decomposition_terms,
    fill_decomposition,
    optimism_counts,
    prediction_error_table,
    regret,
)
from oracles.values import hindsight_optimal_policy
from services.report import check_report_logs, emit_report
from services.settings import (
    ExperimentConfig,
    config_from_dict,
    config_hash,
    with_overrides,
    worker_count,
)
from shared.constants import MODE_STREAM_CODES, ORACLE_ABORT_RESIDUAL, AgentMode
from shared.exceptions import InstanceError, OracleResidualError, RewardError
from shared.hashing import sha256_json

logger = logging.getLogger(__name__)

LOGS_DIRNAME = "logs"
EVAL_DIRNAME = "eval"

# Spawn-key tags for streams that do not belong to a mode
_ADVERSARY_STREAM = 100
_BASES_STREAM = 101


@dataclass
class RunLog:
    """Everything one (mode, seed) cell produced.

    wall_clock is the only field that varies between identical runs.
    """

    config_hash: str
    instance_key: str
    mode: str
    seed: int
    episodes: int
    alpha: float
    beta: float
    records: list[RegretRecord]
    diagnostics: list[dict] = field(default_factory=list)
    potential: list[tuple[float, float]] = field(default_factory=list)
    term_totals: dict = field(default_factory=dict)
    term_envelopes: dict = field(default_factory=dict)
    ideal_bound: float | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data["potential"] = [list(p) for p in self.potential]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunLog":
        data = dict(data)
        data["records"] = [RegretRecord(**r) for r in data["records"]]
        data["potential"] = [tuple(p) for p in data.get("potential", [])]
        return cls(**data)

    @property
    def filename(self) -> str:
        return f"{self.mode}_seed{self.seed}.json"


# --- Instances and rewards ---

def build_run_instance(config: ExperimentConfig, seed: int) -> tuple[LinearMDP, RewardFunction | None]:
    """Instance for one seed; the lock reward comes back for combination locks.

    Raises:
        InstanceError: The instance fails validate_linear_mdp.
    """
    if config.instance_path is not None:
        mdp, lock_reward = load_instance(config.instance_path), None
    else:
        spec = config.instance.with_seed(seed) if config.vary_instance_with_seed else config.instance
        mdp, lock_reward = build_instance(spec)
    report = validate_linear_mdp(mdp)
    if not report.passed:
        failed = [line for line in report.checks if line.startswith("FAIL")]
        raise InstanceError(f"Instance failed validation: {'; '.join(failed)}")
    return mdp, lock_reward


def build_reward_bases(
    config: ExperimentConfig,
    mdp: LinearMDP,
    lock_reward: RewardFunction | None,
) -> list[RewardFunction]:
    """Materialize adversary bases; named 'random' bases draw from the adversary seed."""
    rng = np.random.default_rng(np.random.SeedSequence(config.adversary_seed, spawn_key=(_BASES_STREAM,)))
    expected = (mdp.horizon, mdp.num_states, mdp.num_actions)
    bases = []
    for i, base in enumerate(config.reward_bases):
        if isinstance(base, str):
            reward = named_reward(base, mdp, rng, lock_reward)
        else:
            reward = RewardFunction(np.asarray(base, dtype=float))
        if reward.shape != expected:
            raise RewardError(f"Base reward {i} has shape {reward.shape}, instance needs {expected}")
        if not validate_reward(reward).passed:
            raise RewardError(f"Base reward {i} has entries outside [0, 1]")
        bases.append(reward)
    return bases


def instance_key(mdp: LinearMDP, bases: list[RewardFunction]) -> str:
    """Identity of what a run was measured on: the instance plus its reward bases."""
    return sha256_json({
        "instance": instance_to_dict(mdp),
        "bases": [b.table.tolist() for b in bases],
    })


def instance_family_key(config: ExperimentConfig) -> str:
    """Identity shared by every seed of a vary_with_seed run: the generator spec without its seed."""
    spec = asdict(config.instance)
    del spec["seed"]
    return sha256_json({
        "family": spec,
        "bases": list(config.reward_bases),
        "adversary_seed": config.adversary_seed,
    })


def run_instance_key(config: ExperimentConfig, mdp: LinearMDP, bases: list[RewardFunction]) -> str:
    if config.vary_instance_with_seed and config.instance is not None:
        return instance_family_key(config)
    return instance_key(mdp, bases)


def episode_rng(master_seed: int, mode: AgentMode, seed: int, k: int) -> np.random.Generator:
    """Counter-based stream per (mode, seed, episode); new modes never shift old streams."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(MODE_STREAM_CODES[mode], seed, k))
    )


# --- One cell ---

@dataclass(eq=False)
class CellTrace:
    """Raw output of simulate(): what happened, before any regret measurement."""

    state: AgentState
    rewards: list[RewardFunction]
    artifacts: list[EpisodeArtifacts]
    diagnostics: list[dict]
    bonus_path: np.ndarray
    eval_dump: list[dict]


def simulate(
    mdp: LinearMDP,
    mode: AgentMode,
    hyper: HyperParams,
    adversary: AdversaryKind,
    bases: list[RewardFunction],
    master_seed: int,
    seed: int,
    adversary_seed: int = 0,
    dump_eval: bool = False,
) -> CellTrace:
    """Run K episodes of the adversary/learner protocol.

    Per episode: the adversary commits r^k from the history, the agent
    commits pi^k, the trajectory is sampled, then r^k is revealed to the
    agent. Optimism diagnostics use the Q^k the agent just produced.
    """
    state = init_agent(mode, mdp, hyper)
    history = History()
    trace = CellTrace(state, [], [], [], np.zeros((hyper.episodes, mdp.horizon)), [])

    for k in range(1, hyper.episodes + 1):
        adversary_rng = np.random.default_rng(
            np.random.SeedSequence(adversary_seed, spawn_key=(_ADVERSARY_STREAM, seed, k))
        )
        reward = next_reward(adversary, history, bases, adversary_rng)
        policy = begin_episode(state)
        trajectory = run_episode(mdp, policy, reward, episode_rng(master_seed, mode, seed, k), episode=k)
        end_episode(state, trajectory, reward)
        history.append(trajectory, reward)

        evaluation = state.last_evaluation
        q, v = state.values.q, state.values.v
        table = prediction_error_table(
            mdp, reward, q, v,
            q_bar=evaluation.q_bar if evaluation else None,
            bonus=evaluation.bonus if evaluation else None,
        )
        above, below = optimism_counts(table)
        if evaluation is not None:
            for i, x, a, _ in trajectory.steps():
                trace.bonus_path[k - 1, i] = evaluation.bonus[i, x, a]
        trace.diagnostics.append({
            "k": k,
            "bonus_sum": float(trace.bonus_path[k - 1].sum()),
            "optimism_violations": above,
            "lower_violations": below,
        })
        if dump_eval:
            trace.eval_dump.append({
                "k": k,
                "q_bar": evaluation.q_bar.tolist() if evaluation else None,
                "bonus": evaluation.bonus.tolist() if evaluation else None,
                "weights": evaluation.weights.tolist() if evaluation else None,
            })
        trace.rewards.append(reward)
        trace.artifacts.append(EpisodeArtifacts(policy, q, v, trajectory))
    return trace


def run_cell(config: ExperimentConfig, mode: AgentMode, seed: int) -> tuple[RunLog, list[dict]]:
    """Simulate and measure one (mode, seed) cell.

    Returns:
        (RunLog, eval_dump) with eval_dump empty unless config.dump_eval.

    Raises:
        OracleResidualError: Decomposition residual above ORACLE_ABORT_RESIDUAL.
    """
    started = time.perf_counter()
    mdp, lock_reward = build_run_instance(config, seed)
    bases = build_reward_bases(config, mdp, lock_reward)
    hyper = config.hyperparams(mdp.horizon, mdp.num_actions)
    trace = simulate(mdp, mode, hyper, config.adversary, bases, config.master_seed, seed,
                     config.adversary_seed, config.dump_eval)

    pi_star = hindsight_optimal_policy(mdp, trace.rewards)
    records = regret(mdp, trace.rewards, [a.policy for a in trace.artifacts], pi_star)
    terms = decomposition_terms(mdp, trace.rewards, trace.artifacts, pi_star)
    fill_decomposition(records, terms)

    worst = max(abs(r.residual) for r in records)
    if worst > ORACLE_ABORT_RESIDUAL:
        logger.error("Decomposition residual %.3e in %s seed %d exceeds %.0e",
                     worst, mode, seed, ORACLE_ABORT_RESIDUAL)
        raise OracleResidualError(
            f"Regret decomposition residual {worst:.3e} for {mode} seed {seed} exceeds {ORACLE_ABORT_RESIDUAL:.0e}"
        )
    for entry, t in zip(trace.diagnostics, terms):
        entry["d1_max"] = float(np.abs(t.d1).max())
        entry["d2_max"] = float(np.abs(t.d2).max())

    state = trace.state
    potential = [
        elliptical_potential_check(state.history.arrays(i, mdp.dimension)[0], hyper.lam)
        for i in range(mdp.horizon)
    ]
    envelopes = term_bounds(mdp.horizon, hyper.episodes, mdp.num_actions, hyper.alpha, hyper.zeta,
                            trace.bonus_path)
    totals = {
        "term_i": float(sum(t.term_i for t in terms)),
        "term_ii": float(sum(t.term_ii for t in terms)),
        "term_iii": float(sum(t.term_iii for t in terms)),
    }
    ideal = None
    if mode == AgentMode.IDEAL_OPPO and hyper.alpha > 0:
        ideal = ideal_regret_bound(mdp.horizon, hyper.episodes, mdp.num_actions, hyper.alpha)

    log = RunLog(
        config_hash=config_hash(config),
        instance_key=run_instance_key(config, mdp, bases),
        mode=str(mode),
        seed=seed,
        episodes=hyper.episodes,
        alpha=hyper.alpha,
        beta=state.bonus_params.beta,
        records=records,
        diagnostics=trace.diagnostics,
        potential=potential,
        term_totals=totals,
        term_envelopes={name: (None if v is None or math.isinf(v) else v) for name, v in envelopes.items()},
        ideal_bound=ideal,
        wall_clock=time.perf_counter() - started,
    )
    logger.info(
        "Cell %s seed %d: K=%d cumulative regret %.4f, max residual %.1e (%.1fs)",
        mode, seed, hyper.episodes, records[-1].cum_regret, worst, log.wall_clock,
        extra={"log_metadata": {"mode": str(mode), "seed": seed, "cum_regret": records[-1].cum_regret,
                                "residual": worst, "config_hash": log.config_hash}},
    )
    return log, trace.eval_dump


# --- Whole runs ---

def run_experiment(config: ExperimentConfig, write: bool = True) -> list[RunLog]:
    """Every (mode, seed) cell of a config, in (mode, seed) order.

    With write=True the run logs, optional evaluation dumps, the resolved
    config and the report land in config.output_dir, each file written
    atomically and only after all cells succeeded.
    """
    cells = [(mode, seed) for mode in config.modes for seed in config.seeds]
    workers = max(1, min(worker_count(), len(cells)))
    logger.info("Running %d cells on %d workers (config %s)", len(cells), workers, config_hash(config)[:12])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_cell, config, mode, seed) for mode, seed in cells]
        results = [f.result() for f in futures]

    logs = [log for log, _ in results]
    if write:
        write_run(config, results)
    return logs


def write_run(config: ExperimentConfig, results: list[tuple[RunLog, list[dict]]]) -> Path:
    """Write config, logs, evaluation dumps and the report.

    Raises:
        ReportError: The logs cannot share one report; raised before any file is written.
    """
    check_report_logs([log for log, _ in results])
    out = config.output_dir
    write_json_atomic(out / "config.json", config.to_dict())
    for log, dump in results:
        write_json_atomic(out / LOGS_DIRNAME / log.filename, log.to_dict())
        if config.dump_eval:
            _write_jsonl_atomic(out / EVAL_DIRNAME / f"{log.mode}_seed{log.seed}.jsonl", dump)
    emit_report([log for log, _ in results], out)
    logger.info("Run written to %s", out)
    return out


def _write_jsonl_atomic(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")
    tmp.replace(path)


def load_run_logs(logdir: str | Path) -> list[RunLog]:
    """Read every run log under logdir (or its logs/ subdirectory)."""
    logdir = Path(logdir)
    if (logdir / LOGS_DIRNAME).is_dir():
        logdir = logdir / LOGS_DIRNAME
    return [
        RunLog.from_dict(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted(logdir.glob("*.json"))
    ]


def sweep_label(overrides: dict) -> str:
    return ",".join(f"{key}={json.dumps(value)}" for key, value in sorted(overrides.items()))


def sweep(raw: dict, grid: dict[str, list], write: bool = True) -> dict[str, list[RunLog]]:
    """Full run per grid point under <output_dir>/sweep/<key=value,...>/.

    Args:
        raw: Base config document.
        grid: Dotted config key -> list of values.
    """
    base = config_from_dict(raw)
    keys = sorted(grid)
    results: dict[str, list[RunLog]] = {}
    for values in itertools.product(*(grid[key] for key in keys)):
        overrides = dict(zip(keys, values))
        label = sweep_label(overrides)
        overrides["output_dir"] = str(base.output_dir / "sweep" / label)
        config = config_from_dict(with_overrides(raw, overrides))
        logger.info("Sweep point %s", label)
        results[label] = run_experiment(config, write=write)
    return results
