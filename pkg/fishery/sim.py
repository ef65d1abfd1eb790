"""
Receding-horizon simulation driver.

Each day the current coalition structure is solved over the horizon and
only the first step of the resulting schedule is applied to the real
stock. Every `epoch_days` days the structure may change: by the merge and
split protocol (controlled) or by the clustering heuristic (accelerated).
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from .coalition import CoalitionStructure, EpochSolver, merge_pass, redistribute, split_pass
from .decision import DecisionLog, ProtocolMode
from .errors import BudgetExceeded, FisheryError, SimulationError, SolverError, ValidationError
from .heuristic import HeuristicConfig, run_heuristic_epoch
from .model import EffortSchedule, ModelParams, StockState, catch_per_boat, step_dynamics
from .mpc import Anchor, CommMode, MpcConfig, StructureSolution, solve_structure
from .utils import Block, Budget, check_budget, structure_label, worker_count

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"


class Strategy(str, Enum):
    GRAND = "grand"
    ISOLATED = "isolated"
    CONTROLLED = "controlled"
    ACCELERATED = "accelerated"


@dataclass(frozen=True)
class RunConfig:
    """Everything one simulation needs; runs are deterministic given this"""

    params: ModelParams = field(default_factory=ModelParams.default)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    heuristic: Optional[HeuristicConfig] = None
    strategy: Strategy = Strategy.CONTROLLED
    mode: ProtocolMode = ProtocolMode.WITH_REDISTRIBUTION
    total_days: int = field(default_factory=lambda: settings.TOTAL_DAYS)
    epoch_days: int = field(default_factory=lambda: settings.EPOCH_DAYS)
    max_block_size: int = field(default_factory=lambda: settings.MAX_BLOCK_SIZE)

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "mode", ProtocolMode(self.mode))
        if self.total_days < 1:
            raise ValidationError(f"total_days must be at least 1, got {self.total_days}")
        if self.epoch_days < 1:
            raise ValidationError(f"epoch_days must be at least 1, got {self.epoch_days}")
        if self.max_block_size < 1:
            raise ValidationError(f"max_block_size must be positive, got {self.max_block_size}")

    @property
    def heuristic_config(self) -> HeuristicConfig:
        if self.heuristic is not None:
            return self.heuristic
        return HeuristicConfig(**self.mpc.model_dump())

    @property
    def redistributes(self) -> bool:
        # grand and isolated have nothing to share out
        return (self.mode == ProtocolMode.WITH_REDISTRIBUTION
                and self.strategy in (Strategy.CONTROLLED, Strategy.ACCELERATED))

    def describe(self) -> str:
        return (f"strategy={self.strategy.value} mode={self.mode.value} "
                f"K={self.params.n_boats} N={self.params.n_regions} {self.mpc.describe()} "
                f"epoch={self.epoch_days}d days={self.total_days}")


@dataclass(frozen=True)
class StructureSnapshot:
    epoch: int
    day: int
    blocks: Tuple[Block, ...]
    n_boats: int
    max_block_size: int
    changed: bool

    @property
    def label(self) -> str:
        return structure_label(self.blocks)


@dataclass
class SimulationTrace:
    strategy: str
    mode: str
    n_boats: int
    n_regions: int
    stocks: List[np.ndarray] = field(default_factory=list)
    efforts: List[np.ndarray] = field(default_factory=list)
    raw_catch: List[np.ndarray] = field(default_factory=list)
    attributed_catch: List[np.ndarray] = field(default_factory=list)
    day_blocks: List[Tuple[Block, ...]] = field(default_factory=list)
    structures: List[StructureSnapshot] = field(default_factory=list)
    decisions: DecisionLog = field(default_factory=DecisionLog)
    heuristic_objectives: List[List[float]] = field(default_factory=list)
    distance_evaluations: int = 0
    clamp_days: List[int] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    band_violation_days: List[int] = field(default_factory=list)
    sweeps: List[int] = field(default_factory=list)
    solver_steps: List[int] = field(default_factory=list)
    unconverged_days: List[int] = field(default_factory=list)

    @property
    def days(self) -> int:
        return len(self.raw_catch)

    def _matrix(self, rows: List[np.ndarray]) -> np.ndarray:
        if not rows:
            return np.zeros((0, self.n_boats))
        return np.vstack(rows)

    @property
    def cumulative_raw(self) -> np.ndarray:
        return np.cumsum(self._matrix(self.raw_catch), axis=0)

    @property
    def cumulative_attributed(self) -> np.ndarray:
        return np.cumsum(self._matrix(self.attributed_catch), axis=0)

    @property
    def final_structure(self) -> Optional[StructureSnapshot]:
        return self.structures[-1] if self.structures else None

    @property
    def stabilization_day(self) -> Optional[int]:
        """Epoch day from which the structure never changed again"""
        if not self.structures:
            return None
        day = self.structures[0].day
        for snapshot in self.structures[1:]:
            if snapshot.changed:
                day = snapshot.day
        return day

    def record_day(self, stock: np.ndarray, effort: np.ndarray, raw: np.ndarray,
                   attributed: np.ndarray, blocks: Tuple[Block, ...], seconds: float,
                   sweeps: int = 0, solver_steps: int = 0) -> None:
        self.stocks.append(np.array(stock))
        self.efforts.append(np.array(effort))
        self.raw_catch.append(np.array(raw))
        self.attributed_catch.append(np.array(attributed))
        self.day_blocks.append(blocks)
        self.seconds.append(seconds)
        self.sweeps.append(sweeps)
        self.solver_steps.append(solver_steps)


def initial_structure(config: RunConfig) -> CoalitionStructure:
    n_boats = config.params.n_boats
    if config.strategy == Strategy.GRAND:
        return CoalitionStructure.grand(n_boats)
    return CoalitionStructure.singletons(n_boats, config.max_block_size)


def _attribute(raw: np.ndarray, structure: CoalitionStructure, config: RunConfig) -> np.ndarray:
    if not config.redistributes:
        return np.array(raw)
    attributed = np.array(raw)
    for block in structure.blocks:
        if len(block) > 1:
            members = list(block)
            attributed[members] = redistribute(float(raw[members].sum()), structure.ledger, block)
    return attributed


def _epoch_decision(config: RunConfig, structure: CoalitionStructure, state: StockState,
                    anchor: Optional[Anchor], warm: Optional[EffortSchedule],
                    trace: SimulationTrace, budget: Optional[Budget]
                    ) -> Tuple[CoalitionStructure, StructureSolution]:
    """Adjust the structure at an epoch boundary and return today's solution for it"""
    if config.strategy == Strategy.ACCELERATED:
        cfg = config.heuristic_config
        solver = EpochSolver(state, config.params, cfg, anchor, warm, budget)
        outcome = run_heuristic_epoch(structure, state, config.params, cfg, mode=config.mode,
                                      solver=solver, log=trace.decisions, budget=budget)
        trace.heuristic_objectives.append(list(outcome.objectives))
        trace.distance_evaluations += outcome.distance_evaluations
        return outcome.structure, outcome.solution

    solver = EpochSolver(state, config.params, config.mpc, anchor, warm, budget)
    merged = merge_pass(structure, state, config.params, config.mpc, config.mode,
                        solver=solver, log=trace.decisions)
    final = split_pass(merged, state, config.params, config.mpc, config.mode,
                       solver=solver, log=trace.decisions)
    return final, solver.solve(final)


def run(config: RunConfig, budget: Optional[Budget] = None) -> SimulationTrace:
    """
    Simulate `config.total_days` days.

    Raises:
        SimulationError: a solve failed; the partial trace is attached
        BudgetExceeded: the budget ran out between two units of work
    """
    params = config.params
    logger.info("Run: %s", config.describe())

    comm = CommMode.NONE if config.strategy == Strategy.ISOLATED else CommMode.CROSS
    adaptive = config.strategy in (Strategy.CONTROLLED, Strategy.ACCELERATED)
    trace = SimulationTrace(
        strategy=config.strategy.value,
        mode=config.mode.value,
        n_boats=params.n_boats,
        n_regions=params.n_regions,
    )

    state = StockState.initial(params)
    structure = initial_structure(config)
    warm: Optional[EffortSchedule] = None
    anchor: Optional[Anchor] = None

    day = 0
    try:
        for day in range(config.total_days):
            check_budget(budget)
            started = time.perf_counter()
            epoch_day = day % config.epoch_days == 0

            if epoch_day:
                epoch = day // config.epoch_days
                previous = structure.key
                structure = structure.with_epoch(epoch)
                if adaptive:
                    structure, solution = _epoch_decision(config, structure, state, anchor, warm,
                                                          trace, budget)
                else:
                    solution = solve_structure(structure, state, params, config.mpc, comm,
                                               warm_start=warm, anchor=anchor)
                changed = bool(trace.structures) and structure.key != previous
                trace.structures.append(StructureSnapshot(
                    epoch=epoch, day=day, blocks=structure.blocks, n_boats=params.n_boats,
                    max_block_size=structure.max_block_size, changed=changed,
                ))
                if changed:
                    logger.info("Day %d: structure is now %s", day, structure.label)
            else:
                solution = solve_structure(structure, state, params, config.mpc, comm,
                                           warm_start=warm, anchor=anchor)

            if not solution.band_satisfied:
                trace.band_violation_days.append(day)
                logger.warning("Day %d: sustainability band missed by %.3g fish",
                               day, solution.band_violation)
            if not solution.converged:
                trace.unconverged_days.append(day)

            applied = solution.schedule.first_step()
            raw = catch_per_boat(state, applied, params)
            attributed = _attribute(raw, structure, config)
            stock_today = state.stock
            state = step_dynamics(state, applied, params)
            if state.clamped:
                trace.clamp_days.append(day)

            warm = solution.schedule.shifted()
            anchor = solution.next_anchor
            trace.record_day(stock_today, applied, raw, attributed, structure.blocks,
                             time.perf_counter() - started, solution.sweeps, solution.solver_steps)
            logger.debug("Day %d: catch %.2f", day, float(raw.sum()))
    except SolverError as exc:
        raise SimulationError(f"run aborted on day {day}: {exc}", trace) from exc

    trace.stocks.append(np.array(state.stock))
    if trace.band_violation_days:
        logger.warning("Sustainability band missed on %d of %d days",
                       len(trace.band_violation_days), trace.days)
    logger.info("Run finished: total catch %.2f, final structure %s",
                float(trace.cumulative_raw[-1].sum()), structure.label)
    return trace


@dataclass
class Summary:
    strategy: str
    mode: str
    days: int
    total_raw: float
    total_attributed: float
    per_boat_raw: List[float]
    per_boat_attributed: List[float]
    final_structure: str
    stabilization_day: Optional[int]
    structure_changes: int
    clamp_days: int
    band_violation_days: int
    unconverged_days: int
    mean_seconds_per_day: float

    @property
    def total(self) -> float:
        return self.total_attributed

    @property
    def per_boat(self) -> List[float]:
        return self.per_boat_attributed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "strategy": self.strategy,
            "mode": self.mode,
            "days": self.days,
            "total_catch": self.total_attributed,
            "total_raw_catch": self.total_raw,
            "per_boat_catch": self.per_boat_attributed,
            "per_boat_raw_catch": self.per_boat_raw,
            "final_structure": self.final_structure,
            "stabilization_day": self.stabilization_day,
            "structure_changes": self.structure_changes,
            "clamp_days": self.clamp_days,
            "band_violation_days": self.band_violation_days,
            "unconverged_days": self.unconverged_days,
            "mean_seconds_per_day": self.mean_seconds_per_day,
        }

    def format_table(self) -> str:
        lines = [
            f"Strategy: {self.strategy} ({self.mode})",
            f"Days simulated: {self.days}",
            f"Total fish caught: {self.total_attributed:,.2f}",
        ]
        for k, (attr, raw) in enumerate(zip(self.per_boat_attributed, self.per_boat_raw), start=1):
            extra = "" if abs(attr - raw) < 1e-9 else f"  (raw {raw:,.2f})"
            lines.append(f"  boat {k}: {attr:,.2f}{extra}")
        lines.append(f"Final structure: {self.final_structure}")
        if self.stabilization_day is not None:
            lines.append(f"Stable from day: {self.stabilization_day}")
        if self.band_violation_days:
            lines.append(f"Sustainability band missed on {self.band_violation_days} of {self.days} days")
        return "\n".join(lines)


def summarize(trace: SimulationTrace) -> Summary:
    if trace.days:
        raw = trace.cumulative_raw[-1]
        attributed = trace.cumulative_attributed[-1]
    else:
        raw = attributed = np.zeros(trace.n_boats)
    final = trace.final_structure
    return Summary(
        strategy=trace.strategy,
        mode=trace.mode,
        days=trace.days,
        total_raw=float(raw.sum()),
        total_attributed=float(attributed.sum()),
        per_boat_raw=[float(v) for v in raw],
        per_boat_attributed=[float(v) for v in attributed],
        final_structure=final.label if final is not None else "",
        stabilization_day=trace.stabilization_day,
        structure_changes=sum(1 for s in trace.structures if s.changed),
        clamp_days=len(trace.clamp_days),
        band_violation_days=len(trace.band_violation_days),
        unconverged_days=len(trace.unconverged_days),
        mean_seconds_per_day=float(np.mean(trace.seconds)) if trace.seconds else 0.0,
    )


@dataclass
class BenchmarkRow:
    strategy: str
    n_regions: int
    n_boats: int
    days: int
    seconds_per_day: Optional[float]
    status: str
    note: str = ""

    @property
    def size_label(self) -> str:
        return f"{self.n_regions}x{self.n_boats}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "size": self.size_label,
            "n_regions": self.n_regions,
            "n_boats": self.n_boats,
            "days": self.days,
            "seconds_per_day": self.seconds_per_day,
            "status": self.status,
            "note": self.note,
        }


def benchmark_cell(config: RunConfig, budget_seconds: Optional[float] = None) -> BenchmarkRow:
    """Time one run; a run that exceeds its budget or fails becomes an NA cell"""
    row = dict(strategy=config.strategy.value, n_regions=config.params.n_regions,
               n_boats=config.params.n_boats, days=config.total_days)
    budget = Budget(budget_seconds)
    try:
        trace = run(config, budget)
    except BudgetExceeded as exc:
        logger.warning("Benchmark cell %s %dx%d timed out: %s", row["strategy"],
                       row["n_regions"], row["n_boats"], exc)
        return BenchmarkRow(**row, seconds_per_day=None, status="NA", note="timeout")
    except FisheryError as exc:
        logger.error("Benchmark cell %s %dx%d failed: %s", row["strategy"],
                     row["n_regions"], row["n_boats"], exc)
        return BenchmarkRow(**row, seconds_per_day=None, status="NA", note=str(exc))
    return BenchmarkRow(**row, seconds_per_day=float(np.mean(trace.seconds)), status="ok")


def benchmark(configs: Sequence[RunConfig], budget_seconds: Optional[float] = None,
              workers: Optional[int] = None) -> List[BenchmarkRow]:
    """Mean wall clock per simulated day for each config, in input order"""
    workers = worker_count(workers)
    if workers == 1 or len(configs) <= 1:
        return [benchmark_cell(cfg, budget_seconds) for cfg in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(benchmark_cell, cfg, budget_seconds) for cfg in configs]
        return [f.result() for f in futures]
