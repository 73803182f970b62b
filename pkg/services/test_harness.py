"""
Tests for configuration, runs, reports, run logging and the command line.
Run with: python -m services.test_harness
"""

import json
import logging
import math
import tempfile
from pathlib import Path

import pandas as pd

from learner.config import C_BETA_SWEEP
from learner.policy_opt import auto_step_size
from mdp.instance_io import save_instance
from mdp.instances import InstanceSpec, random_tabular
from oppo_lab import main
from oracles.regret import RegretRecord
from services.experiment import (
    RunLog,
    instance_family_key,
    load_run_logs,
    run_experiment,
    sweep,
    sweep_label,
    write_run,
)
from services.lemma_suite import MARTINGALE_MIN_PAIRS, check_lemmas, check_martingale_mean
from services.log_config import detach_log_db, get_logs, setup_logging
from services.report import checkpoints, emit_report
from services.settings import (
    config_from_dict,
    config_hash,
    validate_config,
    with_overrides,
    worker_count,
)
from shared.constants import CSV_COLUMNS, THREADS_ENV_VAR
from shared.exceptions import ConfigError, ReportError


def _raw(output_dir, **overrides):
    raw = {
        "instance": {"kind": "tabular-random", "horizon": 3, "num_states": 3, "num_actions": 2, "seed": 1},
        "adversary": {"kind": "fixed", "bases": ["random"], "seed": 2},
        "modes": ["oppo", "uniform"],
        "hyperparams": {"episodes": 20},
        "seeds": [0, 1],
        "output_dir": str(output_dir),
    }
    return with_overrides(raw, overrides)


def test_validate_config_reports_errors():
    print("\n=== Testing config validation ===")
    assert validate_config({}) == []
    assert validate_config({"bogus": 1}) == ["bogus: unknown key"]

    errors = validate_config({"instance": {"kind": "linear-mixture"}})
    assert any(e.startswith("instance.d:") for e in errors)

    errors = validate_config({"hyperparams": {"alpha": "fast", "episodes": 0}})
    assert any(e.startswith("hyperparams.alpha:") for e in errors)
    assert any(e.startswith("hyperparams.episodes:") for e in errors)

    errors = validate_config({"adversary": {"bases": ["lock"]}})
    assert any("lock" in e for e in errors)

    errors = validate_config({"instance": {"path": "x.json", "horizon": 3}})
    assert any("path" in e for e in errors)

    try:
        config_from_dict({"modes": ["oppo", "oppo"]})
        assert False
    except ConfigError as e:
        assert "modes" in str(e)
    print("Config validation test: PASSED")


def test_auto_alpha_and_hash():
    config = config_from_dict({})
    hyper = config.hyperparams(horizon=4, num_actions=3)
    assert hyper.alpha == auto_step_size(3, 4, 4 * 100)
    assert hyper.alpha == math.sqrt(2.0 * math.log(3) / (4 * 400))

    assert config_hash(config) == config_hash(config_from_dict({}))
    assert config_hash(config) == config_hash(config_from_dict({"hyperparams": {"episodes": 100}}))
    assert config_hash(config) != config_hash(config_from_dict({"hyperparams": {"episodes": 101}}))
    assert config.to_dict()["hyperparams"]["alpha"] == "auto"


def test_worker_count():
    assert worker_count({THREADS_ENV_VAR: "3"}) == 3
    assert worker_count({}) >= 1
    for bad in ("0", "many"):
        try:
            worker_count({THREADS_ENV_VAR: bad})
            assert False
        except ConfigError:
            pass


def test_run_experiment_writes_reports():
    print("\n=== Testing a full run ===")
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        config = config_from_dict(_raw(out))
        logs = run_experiment(config)
        assert [(log.mode, log.seed) for log in logs] == [("oppo", 0), ("oppo", 1), ("uniform", 0), ("uniform", 1)]

        for name in ("config.json", "regret.csv", "summary.json", "logs/oppo_seed0.json", "logs/uniform_seed1.json"):
            assert (out / name).is_file(), name

        frame = pd.read_csv(out / "regret.csv")
        assert list(frame.columns) == CSV_COLUMNS
        assert len(frame) == 2 * 2 * 20
        terms = frame["term_i"] + frame["term_ii"] + frame["term_iii"]
        assert (frame["inst_regret"] - terms).abs().max() < 1e-6

        uniform = frame[(frame["mode"] == "uniform") & (frame["seed"] == 0)]
        gap = uniform["inst_regret"].iloc[0]
        assert gap > 0
        assert (uniform["inst_regret"] - gap).abs().max() < 1e-12
        assert (uniform["cum_regret"] - gap * uniform["k"]).abs().max() < 1e-10
        assert (uniform["bonus_sum"] == 0.0).all()

        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert set(summary["modes"]) == {"oppo", "uniform"}
        assert summary["episodes"] == 20
        assert list(summary["modes"]["uniform"]["checkpoints"]) == ["20"]
        assert abs(summary["modes"]["uniform"]["slope"] - 1.0) < 1e-9
        assert summary["modes"]["oppo"]["max_abs_residual"] < 1e-6

        reloaded = load_run_logs(out)
        assert len(reloaded) == 4
        csv_again, _ = emit_report(reloaded, Path(tmp) / "rebuilt")
        assert csv_again.read_bytes() == (out / "regret.csv").read_bytes()
    print("Full run test: PASSED")


def test_identical_configs_give_identical_csv():
    with tempfile.TemporaryDirectory() as tmp:
        texts = []
        for name in ("a", "b"):
            config = config_from_dict(_raw(Path(tmp) / name, **{"adversary.kind": "adaptive_avoid",
                                                                 "adversary.strength": 0.5}))
            run_experiment(config)
            texts.append((Path(tmp) / name / "regret.csv").read_bytes())
        assert texts[0] == texts[1]
        assert b"\r" not in texts[0]


def test_zero_step_size_matches_uniform_regret():
    with tempfile.TemporaryDirectory() as tmp:
        config = config_from_dict(_raw(tmp, **{"hyperparams.alpha": 0.0, "seeds": [0]}))
        oppo, uniform = run_experiment(config, write=False)
        assert [r.inst_regret for r in oppo.records] == [r.inst_regret for r in uniform.records]


def test_dump_eval_and_loaded_instance():
    with tempfile.TemporaryDirectory() as tmp:
        mdp = random_tabular(InstanceSpec("tabular-random", horizon=2, num_states=3, num_actions=2, seed=5))
        path = save_instance(mdp, Path(tmp) / "instance.json")
        raw = {
            "instance": {"path": str(path)},
            "modes": ["oppo", "ideal_oppo"],
            "hyperparams": {"episodes": 6},
            "output_dir": str(Path(tmp) / "run"),
            "dump_eval": True,
        }
        logs = run_experiment(config_from_dict(raw))
        lines = (Path(tmp) / "run" / "eval" / "oppo_seed0.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6
        first = json.loads(lines[0])
        assert first["k"] == 1 and len(first["q_bar"]) == 2
        ideal = next(log for log in logs if log.mode == "ideal_oppo")
        assert ideal.ideal_bound is not None
        assert ideal.records[-1].cum_regret <= ideal.ideal_bound


def _log(key, episodes=1, seed=0):
    record = RegretRecord(1, 1.0, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0)
    diag = {"k": 1, "bonus_sum": 0.0, "optimism_violations": 0, "lower_violations": 0}
    return RunLog("h", key, "oppo", seed, episodes, 0.1, 1.0, [record] * episodes, [diag] * episodes,
                  term_totals={"term_i": 0.5, "term_ii": 0.0, "term_iii": 0.0},
                  term_envelopes={"term_i": 1.0, "term_ii": 1.0, "term_iii": None})


def test_report_rejects_mixed_logs():
    with tempfile.TemporaryDirectory() as tmp:
        for logs in ([], [_log("a"), _log("b")], [_log("a"), _log("a", episodes=2)]):
            try:
                emit_report(logs, tmp)
                assert False, "mixed or empty logs must be refused"
            except ReportError:
                pass
        csv_path, _ = emit_report([_log("a")], tmp)
        assert csv_path.read_text(encoding="utf-8").splitlines()[0] == ",".join(CSV_COLUMNS)
    assert checkpoints(1200) == [100, 500, 1000, 1200]
    assert checkpoints(500) == [100, 500]


def test_mixed_logs_leave_no_partial_run():
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        config = config_from_dict(_raw(out))
        try:
            write_run(config, [(_log("a"), []), (_log("b", seed=1), [])])
            assert False, "logs from different instances must be refused"
        except ReportError:
            pass
        assert not (out / "config.json").exists()
        assert not (out / "logs").exists()


def test_instance_varied_per_seed_shares_one_report():
    print("\n=== Testing per-seed instances ===")
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        raw = _raw(out, **{
            "instance.kind": "combination-lock",
            "instance.vary_with_seed": True,
            "adversary.bases": ["lock"],
            "modes": ["oppo", "no_bonus"],
            "seeds": [0, 1, 2],
            "hyperparams.episodes": 8,
        })
        config = config_from_dict(raw)
        logs = run_experiment(config)
        assert len({log.instance_key for log in logs}) == 1
        assert logs[0].instance_key == instance_family_key(config)
        assert len(pd.read_csv(out / "regret.csv")) == 2 * 3 * 8
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["instance_key"] == instance_family_key(config)

        other = config_from_dict(with_overrides(raw, {"instance.horizon": 4}))
        assert instance_family_key(other) != instance_family_key(config)
        fixed = config_from_dict(with_overrides(raw, {"instance.vary_with_seed": False}))
        assert len({log.instance_key for log in run_experiment(fixed, write=False)}) == 1
    print("Per-seed instance test: PASSED")


def test_sweep_writes_one_run_per_grid_point():
    with tempfile.TemporaryDirectory() as tmp:
        raw = _raw(tmp, **{"modes": ["oppo"], "seeds": [0], "hyperparams.episodes": 5})
        results = sweep(raw, {"hyperparams.c_beta": [0.5, 2.0]})
        assert list(results) == ["hyperparams.c_beta=0.5", "hyperparams.c_beta=2.0"]
        for label in results:
            assert (Path(tmp) / "sweep" / label / "regret.csv").is_file()
        assert results["hyperparams.c_beta=0.5"][0].beta < results["hyperparams.c_beta=2.0"][0].beta
    assert sweep_label({"b": 1, "a": "x"}) == 'a="x",b=1'


def test_sqlite_run_log():
    with tempfile.TemporaryDirectory() as tmp:
        db = Path(tmp) / "harness_logs.db"
        setup_logging(logging.INFO, db)
        try:
            logging.getLogger("oppo_lab.test").warning(
                "residual check", extra={"log_metadata": {"mode": "oppo", "seed": 3}},
            )
            rows = get_logs(db, level="WARNING")
        finally:
            detach_log_db(db)
        assert len(rows) == 1
        assert "residual check" in rows[0]["message"]
        assert json.loads(rows[0]["metadata"]) == {"mode": "oppo", "seed": 3}


def test_small_lemma_suite_passes():
    print("\n=== Testing property suite ===")
    report = check_lemmas(seed_count=5, episodes=40, optimism_seeds=2, martingale_pairs=400)
    assert report["passed"], [line for line in report["lines"] if line.startswith("FAIL")]
    assert len(report["lines"]) == len(report["checks"])
    names = {c["name"] for c in report["checks"]}
    assert "regret decomposition residual" in names
    assert "exact-Q regret under mirror-descent bound" in names
    try:
        check_lemmas(seed_count=0)
        assert False
    except ConfigError:
        pass
    print("Property suite test: PASSED")


def test_martingale_check_pools_runs():
    assert MARTINGALE_MIN_PAIRS >= 10_000
    result = check_martingale_mean(episodes=30, min_pairs=500)
    assert "600 (k, h) pairs from 5 runs" in result["detail"], result["detail"]
    assert not result["hard"]
    assert result["worst"] >= 0.0


def test_command_line():
    with tempfile.TemporaryDirectory() as tmp:
        good = Path(tmp) / "good.json"
        good.write_text(json.dumps(_raw(Path(tmp) / "run", **{"hyperparams.episodes": 5})), encoding="utf-8")
        bad = Path(tmp) / "bad.json"
        bad.write_text(json.dumps({"instance": {"kind": "maze"}}), encoding="utf-8")

        assert main(["validate", str(good)]) == 0
        assert main(["validate", str(bad)]) == 2
        assert main(["run", str(good)]) == 0
        assert (Path(tmp) / "run" / "harness_logs.db").is_file()
        assert main(["report", str(Path(tmp) / "run"), "--out", str(Path(tmp) / "again")]) == 0
        assert (Path(tmp) / "again" / "regret.csv").is_file()
        assert main(["report", str(Path(tmp) / "empty")]) == 2
        assert main(["export-instance", str(good), str(Path(tmp) / "inst.json")]) == 0
        assert main(["sweep", str(good), "--grid", "[1, 2]"]) == 2

        assert main(["sweep", str(good)]) == 0
        for c_beta in C_BETA_SWEEP:
            assert (Path(tmp) / "run" / "sweep" / f"hyperparams.c_beta={c_beta}" / "regret.csv").is_file()


if __name__ == "__main__":
    test_validate_config_reports_errors()
    test_auto_alpha_and_hash()
    test_worker_count()
    test_run_experiment_writes_reports()
    test_identical_configs_give_identical_csv()
    test_zero_step_size_matches_uniform_regret()
    test_dump_eval_and_loaded_instance()
    test_report_rejects_mixed_logs()
    test_mixed_logs_leave_no_partial_run()
    test_instance_varied_per_seed_shares_one_report()
    test_sweep_writes_one_run_per_grid_point()
    test_sqlite_run_log()
    test_small_lemma_suite_passes()
    test_martingale_check_pools_runs()
    test_command_line()
    print("\n=== ALL HARNESS TESTS PASSED ===")
