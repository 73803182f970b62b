"""
Long-horizon behavioral experiments on the committed configs in configs/acceptance/.
The runs take minutes each and are marked slow; select them with: pytest -m slow
Run with: python -m services.test_acceptance
"""

import json
import tempfile
from pathlib import Path

import pytest

from services.experiment import run_experiment
from services.settings import config_from_dict, validate_config, with_overrides

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs" / "acceptance"
ACCEPTANCE_CONFIGS = ("sublinear_regret", "lock_separation", "periodic_switch")


def _raw(name):
    return json.loads((CONFIG_DIR / f"{name}.json").read_text(encoding="utf-8"))


def _run_summary(name, tmp):
    config = config_from_dict(with_overrides(_raw(name), {"output_dir": str(Path(tmp) / name)}))
    run_experiment(config)
    summary = json.loads((config.output_dir / "summary.json").read_text(encoding="utf-8"))
    final = str(summary["episodes"])
    for mode, stats in summary["modes"].items():
        print(f"{name} {mode}: median {stats['checkpoints'][final]['median']:.2f} at K={final}, "
              f"slope {stats['slope']:.3f}")
    return summary


def _final_median(summary, mode):
    return summary["modes"][mode]["checkpoints"][str(summary["episodes"])]["median"]


def test_acceptance_configs_validate():
    for name in ACCEPTANCE_CONFIGS:
        assert validate_config(_raw(name)) == [], name


@pytest.mark.slow
def test_sublinear_regret_on_fixed_reward():
    print("\n=== Sublinear regret, random tabular, K=5000 ===")
    with tempfile.TemporaryDirectory() as tmp:
        summary = _run_summary("sublinear_regret", tmp)
    oppo, uniform = summary["modes"]["oppo"], summary["modes"]["uniform"]
    assert abs(uniform["slope"] - 1.0) < 1e-6
    assert oppo["slope"] < 1.0
    assert _final_median(summary, "oppo") < _final_median(summary, "uniform")
    assert oppo["max_abs_residual"] < 1e-6


@pytest.mark.slow
def test_lock_separation():
    print("\n=== Combination lock, H=4, K=2000 ===")
    with tempfile.TemporaryDirectory() as tmp:
        summary = _run_summary("lock_separation", tmp)
    assert abs(summary["modes"]["uniform"]["slope"] - 1.0) <= 0.01
    uniform = _final_median(summary, "uniform")
    assert _final_median(summary, "no_bonus") < uniform
    assert _final_median(summary, "oppo") <= uniform
    print(f"oppo / no_bonus median ratio: "
          f"{_final_median(summary, 'oppo') / _final_median(summary, 'no_bonus'):.3f}")


@pytest.mark.slow
def test_periodic_switch_run():
    print("\n=== Periodic switch every 50 episodes, K=5000 ===")
    with tempfile.TemporaryDirectory() as tmp:
        summary = _run_summary("periodic_switch", tmp)
    for mode in ("oppo", "greedy_lsvi"):
        assert summary["modes"][mode]["max_abs_residual"] < 1e-6
        assert summary["modes"][mode]["slope"] is not None


if __name__ == "__main__":
    test_acceptance_configs_validate()
    test_sublinear_regret_on_fixed_reward()
    test_lock_separation()
    test_periodic_switch_run()
    print("\n=== ALL ACCEPTANCE RUNS FINISHED ===")
