import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from config import BENCHMARK_SIZES, DEFAULT_INSTANCE, STRATEGIES, settings
from .checks import InvariantChecks
from .decision import ProtocolMode
from .export import write_benchmark, write_comparison, write_run
from .heuristic import HeuristicConfig
from .model import ModelParams
from .mpc import MpcConfig
from .sim import RunConfig, SimulationTrace, Strategy, Summary, benchmark, run, summarize
from .utils import Budget, ensure_output_dir, worker_count

logger = logging.getLogger(__name__)


class InstanceConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    inflow: List[float] = Field(default_factory=lambda: list(DEFAULT_INSTANCE["inflow"]))
    survival: List[float] = Field(default_factory=lambda: list(DEFAULT_INSTANCE["survival"]))
    catchability: List[float] = Field(default_factory=lambda: list(DEFAULT_INSTANCE["catchability"]))
    initial_stock: List[float] = Field(default_factory=lambda: list(DEFAULT_INSTANCE["initial_stock"]))


class HeuristicOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: float = Field(default_factory=lambda: settings.HEURISTIC_MU, gt=0)
    gamma_tradeoff: float = Field(default_factory=lambda: settings.HEURISTIC_GAMMA, gt=0)
    merge_threshold: float = Field(default_factory=lambda: settings.MERGE_THRESHOLD, ge=0)
    max_iterations: int = Field(default_factory=lambda: settings.HEURISTIC_MAX_ITERATIONS, ge=1)


class CliConfigFile(BaseModel):
    """JSON run description; every key is optional, unknown keys are rejected"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    instance: InstanceConfig = Field(default_factory=InstanceConfig)
    mpc: MpcConfig = Field(default_factory=MpcConfig)
    heuristic: HeuristicOptions = Field(default_factory=HeuristicOptions)
    strategy: Strategy = Strategy.CONTROLLED
    mode: ProtocolMode = ProtocolMode.WITH_REDISTRIBUTION
    total_days: int = Field(default_factory=lambda: settings.TOTAL_DAYS, ge=1)
    epoch_days: int = Field(default_factory=lambda: settings.EPOCH_DAYS, ge=1)
    max_block_size: int = Field(default_factory=lambda: settings.MAX_BLOCK_SIZE, ge=1)
    output_dir: str = "results"


def load_config(path: Optional[str] = None) -> CliConfigFile:
    """
    Read and validate a JSON config file; no path means all defaults.

    Raises:
        OSError: the file cannot be read
        ValueError: malformed JSON or a schema violation
    """
    if path is None:
        return CliConfigFile()
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    return CliConfigFile.model_validate(data)


def to_run_config(file_cfg: CliConfigFile, strategy: Optional[str] = None,
                  mode: Optional[str] = None, days: Optional[int] = None,
                  epoch_days: Optional[int] = None) -> RunConfig:
    """Combine a validated config file with command-line overrides"""
    params = ModelParams.from_lists(**file_cfg.instance.model_dump())
    heuristic = HeuristicConfig(**file_cfg.mpc.model_dump(), **file_cfg.heuristic.model_dump())
    return RunConfig(
        params=params,
        mpc=file_cfg.mpc,
        heuristic=heuristic,
        strategy=Strategy(strategy) if strategy else file_cfg.strategy,
        mode=ProtocolMode(mode) if mode else file_cfg.mode,
        total_days=days if days is not None else file_cfg.total_days,
        epoch_days=epoch_days if epoch_days is not None else file_cfg.epoch_days,
        max_block_size=file_cfg.max_block_size,
    )


def run_single(config: RunConfig, out_dir: Optional[str] = None,
               budget_seconds: Optional[float] = None) -> Dict[str, Any]:
    """
    Run one simulation end to end

    Args:
        config: Complete run configuration
        out_dir: Directory for trace/summary/decision files, or None to skip writing
        budget_seconds: Optional wall-clock limit for the run

    Returns:
        Dictionary with the trace, its summary, invariant issues and written files
    """
    # Step 1: Simulate
    trace = run(config, Budget(budget_seconds) if budget_seconds is not None else None)

    # Step 2: Summarize
    summary = summarize(trace)

    # Step 3: Invariant checks over the finished trace
    issues = InvariantChecks().trace_checks(trace)
    for family, codes in issues.items():
        if codes:
            logger.warning("Invariant check %s reported %s", family, ", ".join(codes))

    # Step 4: Export
    files: List[str] = []
    if out_dir is not None:
        files = write_run(ensure_output_dir(out_dir), trace, summary)

    return {"trace": trace, "summary": summary, "issues": issues, "files": files}


def _run_and_summarize(config: RunConfig) -> Tuple[SimulationTrace, Summary]:
    trace = run(config)
    return trace, summarize(trace)


def run_comparison(config: RunConfig, out_dir: Optional[str] = None,
                   workers: Optional[int] = None) -> Dict[str, Any]:
    """
    All four strategies on the same instance; the adaptive ones use
    `config.mode`. Independent runs go to a process pool.
    """
    configs = [replace(config, strategy=Strategy(name)) for name in STRATEGIES]
    workers = worker_count(workers)

    if workers == 1:
        results = [_run_and_summarize(cfg) for cfg in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_and_summarize, configs))

    traces = [trace for trace, _ in results]
    summaries = [summary for _, summary in results]

    files: List[str] = []
    if out_dir is not None:
        files = write_comparison(ensure_output_dir(out_dir), traces, summaries)

    return {"traces": traces, "summaries": summaries, "files": files}


def benchmark_configs(base: RunConfig, sizes: Optional[Sequence[int]] = None,
                      strategies: Optional[Sequence[str]] = None) -> List[RunConfig]:
    """One config per (fleet size, strategy) cell, sizes outermost"""
    sizes = list(sizes) if sizes else list(BENCHMARK_SIZES)
    strategies = list(strategies) if strategies else list(STRATEGIES)
    return [
        replace(base, params=ModelParams.scaled(n_boats), strategy=Strategy(name))
        for n_boats in sizes
        for name in strategies
    ]


def run_benchmark(base: RunConfig, sizes: Optional[Sequence[int]] = None,
                  strategies: Optional[Sequence[str]] = None,
                  budget_seconds: Optional[float] = None, out_dir: Optional[str] = None,
                  workers: Optional[int] = None) -> Dict[str, Any]:
    rows = benchmark(benchmark_configs(base, sizes, strategies), budget_seconds, workers)
    files: List[str] = []
    if out_dir is not None:
        files.append(write_benchmark(ensure_output_dir(out_dir), rows))
    return {"rows": rows, "files": files}
