"""Regret reports: per-episode CSV and a per-mode summary JSON.

The CSV has one row per (mode, seed, k) in the fixed CSV_COLUMNS order. The
summary carries median and interquartile range of cumulative regret at the
checkpoints, and the least-squares slope of log median cumulative regret
against log k over the last 90% of episodes.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from mdp.instance_io import write_json_atomic
from shared.constants import CSV_COLUMNS, MODE_STREAM_CODES, REPORT_CHECKPOINTS, AgentMode
from shared.exceptions import ReportError

if TYPE_CHECKING:
    from services.experiment import RunLog

logger = logging.getLogger(__name__)

CSV_NAME = "regret.csv"
SUMMARY_NAME = "summary.json"


def regret_frame(logs: list[RunLog]) -> pd.DataFrame:
    """Rows in (mode, seed, k) order, columns exactly CSV_COLUMNS."""
    ordered = sorted(logs, key=lambda log: (MODE_STREAM_CODES[AgentMode(log.mode)], log.seed))
    rows = []
    for log in ordered:
        for record, diag in zip(log.records, log.diagnostics):
            rows.append({
                "mode": log.mode,
                "seed": log.seed,
                "k": record.k,
                "inst_regret": record.inst_regret,
                "cum_regret": record.cum_regret,
                "term_i": record.term_i,
                "term_ii": record.term_ii,
                "term_iii": record.term_iii,
                "bonus_sum": diag["bonus_sum"],
                "optimism_violations": diag["optimism_violations"],
            })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def checkpoints(episodes: int) -> list[int]:
    return sorted({c for c in REPORT_CHECKPOINTS if c <= episodes} | {episodes})


def loglog_slope(k: np.ndarray, median: np.ndarray, episodes: int) -> float | None:
    """Least-squares slope of log median vs log k over k in [K/10, K].

    Points with a non-positive median are dropped; fewer than two points
    leave the slope undefined.
    """
    lo = max(1, math.ceil(episodes / 10))
    keep = (k >= lo) & (k <= episodes) & (median > 0)
    if keep.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(k[keep]), np.log(median[keep]), 1)
    return float(slope)


def summarize_mode(frame: pd.DataFrame, logs: list[RunLog], episodes: int) -> dict:
    curves = frame.pivot(index="k", columns="seed", values="cum_regret").sort_index()
    median = curves.median(axis=1)
    q25 = curves.quantile(0.25, axis=1)
    q75 = curves.quantile(0.75, axis=1)

    at = {}
    for c in checkpoints(episodes):
        at[str(c)] = {
            "median": float(median.loc[c]),
            "q25": float(q25.loc[c]),
            "q75": float(q75.loc[c]),
            "iqr": float(q75.loc[c] - q25.loc[c]),
        }

    totals = pd.DataFrame([log.term_totals for log in logs])
    envelopes = pd.DataFrame([log.term_envelopes for log in logs]).astype(float)
    potential_failures = sum(1 for log in logs for lhs, rhs in log.potential if lhs > rhs + 1e-9)
    ideal = [log.ideal_bound for log in logs if log.ideal_bound is not None]

    return {
        "seeds": sorted(int(s) for s in curves.columns),
        "checkpoints": at,
        "slope": loglog_slope(median.index.to_numpy(dtype=float), median.to_numpy(), episodes),
        "slope_window": [max(1, math.ceil(episodes / 10)), episodes],
        "term_totals_median": {c: float(totals[c].median()) for c in totals.columns},
        "term_envelopes_median": {
            c: (None if envelopes[c].isna().all() else float(envelopes[c].median())) for c in envelopes.columns
        },
        "max_abs_residual": float(max(abs(r.residual) for log in logs for r in log.records)),
        "optimism_violations": int(frame["optimism_violations"].sum()),
        "potential_failures": potential_failures,
        "ideal_bound": ideal[0] if ideal else None,
    }


def check_report_logs(logs: list[RunLog]) -> tuple[str, int]:
    """Return the (instance_key, episodes) the logs share.

    Raises:
        ReportError: No logs, logs from different instances or different K.
    """
    if not logs:
        raise ReportError("No run logs to report")
    keys = {log.instance_key for log in logs}
    if len(keys) > 1:
        raise ReportError(f"Run logs come from {len(keys)} different instances")
    lengths = {log.episodes for log in logs}
    if len(lengths) > 1:
        raise ReportError(f"Run logs disagree on the episode count: {sorted(lengths)}")
    return keys.pop(), lengths.pop()


def emit_report(logs: list[RunLog], out: str | Path) -> tuple[Path, Path]:
    """Write regret.csv and summary.json into out.

    Raises:
        ReportError: See check_report_logs.
    """
    key, episodes = check_report_logs(logs)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    frame = regret_frame(logs)
    csv_path = out / CSV_NAME
    tmp = csv_path.with_name(f".{CSV_NAME}.tmp")
    frame.to_csv(tmp, index=False, lineterminator="\n", encoding="utf-8")
    tmp.replace(csv_path)

    summary = {
        "instance_key": key,
        "config_hashes": sorted({log.config_hash for log in logs}),
        "episodes": episodes,
        "modes": {},
    }
    for mode, group in frame.groupby("mode", sort=False):
        mode_logs = [log for log in logs if log.mode == mode]
        summary["modes"][mode] = summarize_mode(group, mode_logs, episodes)
    summary_path = out / SUMMARY_NAME
    write_json_atomic(summary_path, summary)

    for mode, stats in summary["modes"].items():
        final = stats["checkpoints"][str(episodes)]
        logger.info("%s: median cumulative regret at K=%d is %.4f (IQR %.4f), slope %s",
                    mode, episodes, final["median"], final["iqr"],
                    "n/a" if stats["slope"] is None else f"{stats['slope']:.3f}")
    return csv_path, summary_path
