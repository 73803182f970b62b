"""OPPO-Lab command line.

Usage:
    python oppo_lab.py validate <config>
    python oppo_lab.py run <config> [--dump-eval]
    python oppo_lab.py sweep <config> [--grid '{"hyperparams.c_beta": [0.1, 1, 10]}']
    python oppo_lab.py check-lemmas [--seeds N] [--sizes JSON] [--episodes K]
    python oppo_lab.py report <logdir>
    python oppo_lab.py export-instance <config> <out.json> [--seed S]

Exit codes: 0 success, 1 a hard lemma check failed, 2 invalid input or an
aborted run.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from learner.config import C_BETA_SWEEP
from mdp.instance_io import save_instance
from services.experiment import build_run_instance, load_run_logs, run_experiment, sweep
from services.lemma_suite import check_lemmas
from services.log_config import detach_log_db, setup_logging
from services.report import emit_report
from services.settings import (
    config_from_dict,
    describe_config,
    load_config,
    validate_config,
    with_overrides,
)
from shared.exceptions import ConfigError, OppoLabError

logger = logging.getLogger("oppo_lab")

LOG_DB_NAME = "harness_logs.db"


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e


def _parse_json_arg(text: str, what: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} is not valid JSON: {e}") from e
    if not isinstance(value, dict):
        raise ConfigError(f"{what} must be a JSON object")
    return value


def cmd_validate(args) -> int:
    raw = _read_json(args.config)
    errors = validate_config(raw)
    if errors:
        for error in errors:
            print(f"FAIL: {error}")
        return 2
    config = config_from_dict(raw)
    for seed in config.seeds if config.vary_instance_with_seed else config.seeds[:1]:
        build_run_instance(config, seed)
    print(json.dumps(describe_config(config), indent=2, sort_keys=True))
    print("PASS: config and instance valid")
    return 0


def cmd_run(args) -> int:
    raw = _read_json(args.config)
    if args.dump_eval:
        raw = with_overrides(raw, {"dump_eval": True})
    config = config_from_dict(raw)
    log_db = config.output_dir / LOG_DB_NAME
    setup_logging(getattr(logging, config.log_level), log_db)
    try:
        logs = run_experiment(config)
    finally:
        detach_log_db(log_db)
    for log in logs:
        print(f"{log.mode:<12} seed {log.seed:<6} cumulative regret {log.records[-1].cum_regret:.4f}")
    print(f"Written to {config.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    raw = _read_json(args.config)
    grid = _parse_json_arg(args.grid, "--grid") if args.grid else {"hyperparams.c_beta": list(C_BETA_SWEEP)}
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"Grid entry {key} must be a non-empty list")
    base = load_config(args.config)
    log_db = base.output_dir / LOG_DB_NAME
    setup_logging(getattr(logging, base.log_level), log_db)
    try:
        results = sweep(raw, grid)
    finally:
        detach_log_db(log_db)
    for label, logs in results.items():
        final = sorted(log.records[-1].cum_regret for log in logs)
        print(f"{label}: {len(logs)} cells, median final cumulative regret {final[len(final) // 2]:.4f}")
    return 0


def cmd_check_lemmas(args) -> int:
    sizes = _parse_json_arg(args.sizes, "--sizes") if args.sizes else None
    report = check_lemmas(seed_count=args.seeds, sizes=sizes, episodes=args.episodes)
    for line in report["lines"]:
        print(line)
    print("SUITE PASSED" if report["passed"] else "SUITE FAILED")
    return 0 if report["passed"] else 1


def cmd_report(args) -> int:
    logs = load_run_logs(args.logdir)
    out = Path(args.out) if args.out else Path(args.logdir)
    csv_path, summary_path = emit_report(logs, out)
    print(f"Wrote {csv_path} and {summary_path} from {len(logs)} run logs")
    return 0


def cmd_export_instance(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    mdp, _ = build_run_instance(config, seed)
    path = save_instance(mdp, args.out)
    print(f"Wrote {mdp.features.kind} instance to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oppo_lab", description="Optimistic policy optimization lab")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Console log level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="Check a config and build its instance")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="Run every (mode, seed) cell of a config")
    p.add_argument("config")
    p.add_argument("--dump-eval", action="store_true",
                   help="Write per-episode Q-bar, bonus and weight tables as JSON lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Run a config over a grid of dotted-key overrides")
    p.add_argument("config")
    p.add_argument("--grid", help='JSON object, e.g. {"hyperparams.c_beta": [0.1, 1, 10]}; default sweeps c_beta over '
                   f"{C_BETA_SWEEP}")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-lemmas", help="Run the property suite")
    p.add_argument("--seeds", type=int, default=100, help="Random instances per identity check")
    p.add_argument("--sizes", default="", help='JSON bounds, e.g. {"max_horizon": 5, "max_states": 6}')
    p.add_argument("--episodes", type=int, default=500, help="K for run-level checks")
    p.set_defaults(func=cmd_check_lemmas)

    p = sub.add_parser("report", help="Rebuild regret.csv and summary.json from run logs")
    p.add_argument("logdir")
    p.add_argument("--out", default="", help="Output directory (default: logdir)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-instance", help="Save a config's instance as JSON")
    p.add_argument("config")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=None, help="Seed for vary_with_seed instances")
    p.set_defaults(func=cmd_export_instance)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(logging, args.log_level))
    try:
        return args.func(args)
    except OppoLabError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
