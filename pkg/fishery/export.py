import json
import logging
import os
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from .sim import BenchmarkRow, SimulationTrace, Summary

logger = logging.getLogger(__name__)


def trace_frame(trace: SimulationTrace) -> pd.DataFrame:
    """One row per simulated day"""
    days = trace.days
    columns: Dict[str, np.ndarray] = {"day": np.arange(days)}
    if days:
        stocks = np.vstack(trace.stocks[:days])
        efforts = np.stack(trace.efforts)
        raw = np.vstack(trace.raw_catch)
        attributed = np.vstack(trace.attributed_catch)
    else:
        stocks = np.zeros((0, trace.n_regions))
        efforts = np.zeros((0, trace.n_boats, trace.n_regions))
        raw = attributed = np.zeros((0, trace.n_boats))

    for i in range(trace.n_regions):
        columns[f"stock_{i + 1}"] = stocks[:, i]
    for k in range(trace.n_boats):
        for i in range(trace.n_regions):
            columns[f"effort_{k + 1}_{i + 1}"] = efforts[:, k, i]
    for k in range(trace.n_boats):
        columns[f"raw_{k + 1}"] = raw[:, k]
    for k in range(trace.n_boats):
        columns[f"attributed_{k + 1}"] = attributed[:, k]
    columns["seconds"] = np.asarray(trace.seconds[:days], dtype=float)
    columns["sweeps"] = np.asarray(trace.sweeps[:days], dtype=int)
    columns["solver_steps"] = np.asarray(trace.solver_steps[:days], dtype=int)
    columns["band_missed"] = np.isin(np.arange(days), trace.band_violation_days)
    return pd.DataFrame(columns)


def structures_frame(trace: SimulationTrace) -> pd.DataFrame:
    return pd.DataFrame(
        [{"epoch": s.epoch, "day": s.day, "structure": s.label, "changed": s.changed}
         for s in trace.structures],
        columns=["epoch", "day", "structure", "changed"],
    )


def decisions_frame(trace: SimulationTrace) -> pd.DataFrame:
    rows = trace.decisions.to_rows()
    columns = ["epoch", "day", "kind", "structure", "candidate", "part_m", "part_n",
               "merged_obj", "obj_m", "obj_n", "share_m", "share_n", "margin", "accepted", "note"]
    return pd.DataFrame(rows, columns=columns)


def comparison_frame(summaries: Sequence[Summary]) -> pd.DataFrame:
    """Total catch per strategy, one column per boat"""
    rows = []
    for summary in summaries:
        row = {"strategy": summary.strategy, "mode": summary.mode, "total": summary.total}
        for k, value in enumerate(summary.per_boat, start=1):
            row[f"boat_{k}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def cumulative_frame(traces: Sequence[SimulationTrace], boat: int = 0) -> pd.DataFrame:
    """Cumulative catch of one boat under each strategy, day by day"""
    series = {}
    for trace in traces:
        series[trace.strategy] = pd.Series(trace.cumulative_attributed[:, boat])
    frame = pd.DataFrame(series)
    frame.insert(0, "day", np.arange(len(frame)))
    return frame


def benchmark_frame(rows: Sequence[BenchmarkRow]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in rows],
                        columns=["strategy", "size", "n_regions", "n_boats", "days",
                                 "seconds_per_day", "status", "note"])


def benchmark_grid(rows: Sequence[BenchmarkRow]) -> pd.DataFrame:
    """Sizes down, strategies across; NA where a cell did not finish"""
    frame = benchmark_frame(rows)
    if frame.empty:
        return frame
    frame["cell"] = [
        f"{v:.4f}" if status == "ok" else "NA"
        for v, status in zip(frame["seconds_per_day"], frame["status"])
    ]
    order = list(dict.fromkeys(frame["strategy"]))
    sizes = list(dict.fromkeys(frame["size"]))
    grid = frame.pivot(index="size", columns="strategy", values="cell")
    return grid.reindex(index=sizes, columns=order)


def format_comparison(summaries: Sequence[Summary]) -> str:
    frame = comparison_frame(summaries)
    return frame.to_string(index=False, float_format=lambda v: f"{v:,.2f}")


def write_run(out_dir: str, trace: SimulationTrace, summary: Summary) -> List[str]:
    """Write trace.csv, summary.json, decisions.csv and structures.csv"""
    written = []
    path = os.path.join(out_dir, "trace.csv")
    trace_frame(trace).to_csv(path, index=False)
    written.append(path)

    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
    written.append(path)

    path = os.path.join(out_dir, "decisions.csv")
    decisions_frame(trace).to_csv(path, index=False)
    written.append(path)

    path = os.path.join(out_dir, "structures.csv")
    structures_frame(trace).to_csv(path, index=False)
    written.append(path)

    logger.info("Wrote %d files to %s", len(written), out_dir)
    return written


def write_comparison(out_dir: str, traces: Sequence[SimulationTrace],
                     summaries: Sequence[Summary]) -> List[str]:
    comparison = os.path.join(out_dir, "comparison.csv")
    comparison_frame(summaries).to_csv(comparison, index=False)
    cumulative = os.path.join(out_dir, "cumulative_boat1.csv")
    cumulative_frame(traces).to_csv(cumulative, index=False)
    return [comparison, cumulative]


def write_benchmark(out_dir: str, rows: Sequence[BenchmarkRow]) -> str:
    path = os.path.join(out_dir, "benchmark.csv")
    benchmark_frame(rows).to_csv(path, index=False)
    return path
