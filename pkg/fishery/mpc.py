"""
Receding-horizon effort optimization.

Each coalition maximizes its predicted catch over the horizon with a shared
effort schedule, holding the other coalitions' broadcast schedules fixed.
The feasible set is a product of probability simplices, so the solver is a
projected-gradient ascent with an adjoint gradient of the rolled-out
objective. The sustainability band is enforced with an augmented
Lagrangian: one multiplier per bound and banded step, updated between
ascent rounds.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import settings
from .errors import InfeasibleBandError, SolverError, ValidationError
from .model import EffortSchedule, ModelParams, StockState, predict_stocks
from .utils import Block, block_label

if TYPE_CHECKING:
    from .coalition import CoalitionStructure

logger = logging.getLogger(__name__)

_ARMIJO = 1e-4
_MAX_BACKTRACKS = 40
# Bounds are tightened by this share of the half-width while solving
_BAND_BACKOFF = 1e-3

Anchor = Union[np.ndarray, Mapping]


class BandPolicy(str, Enum):
    SOFT = "soft"
    STRICT = "strict"
    OFF = "off"


class BandScope(str, Enum):
    EVERY_STEP = "every_step"
    TERMINAL = "terminal"


class CommMode(str, Enum):
    CROSS = "cross"
    NONE = "none"


class MpcConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    horizon: int = Field(default_factory=lambda: settings.HORIZON, ge=1)
    # Absolute band half-width in fish; when unset the fraction below applies
    sustainability_radius: Optional[float] = Field(default=None, ge=0)
    radius_fraction: float = Field(default_factory=lambda: settings.RADIUS_FRACTION, ge=0)
    band_policy: BandPolicy = Field(default_factory=lambda: BandPolicy(settings.BAND_POLICY))
    band_scope: BandScope = Field(default_factory=lambda: BandScope(settings.BAND_SCOPE))
    band_tol: float = Field(default_factory=lambda: settings.BAND_TOL, ge=0)
    max_outer_iterations: int = Field(default_factory=lambda: settings.MAX_OUTER_ITERATIONS, ge=1)
    convergence_tol: float = Field(default_factory=lambda: settings.CONVERGENCE_TOL, gt=0)
    solver_max_steps: int = Field(default_factory=lambda: settings.SOLVER_MAX_STEPS, ge=1)
    solver_step_tol: float = Field(default_factory=lambda: settings.SOLVER_STEP_TOL, gt=0)
    # Ascent stops once a step gains less than this share of the objective
    solver_gain_tol: float = Field(default_factory=lambda: settings.SOLVER_GAIN_TOL, gt=0)
    penalty_weight: float = Field(default_factory=lambda: settings.PENALTY_WEIGHT, gt=0)
    penalty_growth: float = Field(default_factory=lambda: settings.PENALTY_GROWTH, ge=1)
    penalty_rounds: int = Field(default_factory=lambda: settings.PENALTY_ROUNDS, ge=1)

    def band(self, anchor: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper stock bounds around the anchor x^eq"""
        if self.sustainability_radius is not None:
            radius = np.full_like(anchor, self.sustainability_radius, dtype=float)
        else:
            radius = self.radius_fraction * np.abs(anchor)
        return anchor - radius, anchor + radius

    def banded_steps(self) -> np.ndarray:
        """Which of the predicted stocks x_1..x_T the band applies to"""
        mask = np.zeros(self.horizon, dtype=bool)
        if self.band_policy == BandPolicy.OFF:
            return mask
        if self.band_scope == BandScope.TERMINAL:
            mask[-1] = True
        else:
            mask[:] = True
        return mask

    def describe(self) -> str:
        if self.band_policy == BandPolicy.OFF:
            band = "off"
        elif self.sustainability_radius is not None:
            band = f"R={self.sustainability_radius:g} fish ({self.band_policy.value}, {self.band_scope.value})"
        else:
            band = f"R={self.radius_fraction:.0%} of x_eq ({self.band_policy.value}, {self.band_scope.value})"
        return f"T={self.horizon} band={band} max_outer={self.max_outer_iterations}"


@dataclass(frozen=True, eq=False)
class MpcSolution:
    """Result of one coalition's horizon solve"""

    target: Block
    schedule: EffortSchedule
    trajectory: np.ndarray
    equilibrium_stock: np.ndarray
    objective_per_coalition: Dict[Block, float]
    converged: bool
    band_satisfied: bool = True
    band_violation: float = 0.0
    iterations: int = 0

    @property
    def objective(self) -> float:
        return self.objective_per_coalition[self.target]

    def catch_of(self, boats: Tuple[int, ...], catchability: np.ndarray) -> float:
        """Predicted horizon catch of a subset of boats under this solution"""
        boats = list(boats)
        per_boat = np.einsum("kit,ti->k", self.schedule.effort[boats], self.trajectory[:-1])
        return float(np.sum(catchability[boats] * per_boat))


@dataclass(frozen=True, eq=False)
class StructureSolution(Mapping):
    """Outcome of the sequential equilibrium loop: coalition id -> MpcSolution"""

    solutions: Dict[Block, MpcSolution]
    schedule: EffortSchedule
    equilibrium_stock: np.ndarray
    sweeps: int
    comm_mode: CommMode = CommMode.CROSS

    def __getitem__(self, block: Block) -> MpcSolution:
        return self.solutions[block]

    def __iter__(self) -> Iterator[Block]:
        return iter(self.solutions)

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def objectives(self) -> Dict[Block, float]:
        """Each coalition's own predicted catch from its latest solve"""
        return {block: sol.objective for block, sol in self.solutions.items()}

    @property
    def total_objective(self) -> float:
        return float(sum(self.objectives.values()))

    @property
    def converged(self) -> bool:
        return all(sol.converged for sol in self.solutions.values())

    @property
    def band_satisfied(self) -> bool:
        return all(sol.band_satisfied for sol in self.solutions.values())

    @property
    def band_violation(self) -> float:
        return max((sol.band_violation for sol in self.solutions.values()), default=0.0)

    @property
    def solver_steps(self) -> int:
        return sum(sol.iterations for sol in self.solutions.values())

    @property
    def next_anchor(self) -> Anchor:
        """
        Band centre for tomorrow's solve. Without communication every
        coalition keeps the terminal stock of its own prediction; otherwise
        all share the terminal stock of the composed schedule.
        """
        if self.comm_mode == CommMode.NONE:
            return {block: sol.equilibrium_stock for block, sol in self.solutions.items()}
        return self.equilibrium_stock


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of v onto {w : w >= 0, sum(w) = 1}"""
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"expected a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("cannot project a non-finite vector")
    return _project_columns(arr[:, None])[:, 0]


def _project_columns(m: np.ndarray) -> np.ndarray:
    """Project every column of an N×T matrix onto the simplex (sort method)"""
    n = m.shape[0]
    u = -np.sort(-m, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, n + 1)[:, None]
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(m.shape[1])] / (rho + 1)
    return np.maximum(m - theta, 0.0)


@dataclass
class _Problem:
    """One coalition's horizon problem with everything else frozen"""

    params: ModelParams
    x0: np.ndarray
    gamma: float
    others: np.ndarray          # N×T pressure from boats outside the coalition
    banded: np.ndarray          # T flags over the predicted stocks x_1..x_T
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    margin: Optional[np.ndarray] = None
    mu: float = 0.0
    virtual_sum: Optional[np.ndarray] = None
    virtual_sq: float = 0.0
    size: int = 1
    rho: float = 1.0
    lam_up: Optional[np.ndarray] = None
    lam_lo: Optional[np.ndarray] = None

    @property
    def band_on(self) -> bool:
        return bool(self.banded.any())

    def set_band(self, lower: np.ndarray, upper: np.ndarray) -> None:
        self.lower, self.upper = lower, upper
        self.margin = _BAND_BACKOFF * (upper - lower) / 2

    def reset_multipliers(self, rho: float) -> None:
        shape = (self.banded.shape[0], self.x0.shape[0])
        self.rho = rho
        self.lam_up = np.zeros(shape)
        self.lam_lo = np.zeros(shape)

    def rollout(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        horizon = u.shape[1]
        stocks = np.empty((horizon + 1, self.x0.shape[0]))
        active = np.ones((horizon, self.x0.shape[0]), dtype=bool)
        stocks[0] = self.x0
        for t in range(horizon):
            pressure = self.gamma * u[:, t] + self.others[:, t]
            nxt = self.params.inflow + (self.params.survival - pressure) * stocks[t]
            active[t] = nxt > 0
            stocks[t + 1] = np.where(active[t], nxt, 0.0)
        return stocks, active

    def greedy(self, horizon: int) -> np.ndarray:
        """All effort on the richest predicted region at every step"""
        u = np.zeros((self.x0.shape[0], horizon))
        x = np.array(self.x0, dtype=float)
        for t in range(horizon):
            u[int(np.argmax(x)), t] = 1.0
            pressure = self.gamma * u[:, t] + self.others[:, t]
            x = np.maximum(self.params.inflow + (self.params.survival - pressure) * x, 0.0)
        return u

    def _gaps(self, stocks: np.ndarray, margin) -> Tuple[np.ndarray, np.ndarray]:
        # positive where a bound is broken
        x = stocks[1:]
        return x - (self.upper - margin), (self.lower + margin) - x

    def violation(self, stocks: np.ndarray, tightened: bool = False) -> float:
        """Worst distance outside the band over the banded steps"""
        if not self.band_on:
            return 0.0
        over, under = self._gaps(stocks, self.margin if tightened else 0.0)
        worst = np.maximum(np.maximum(over, under), 0.0)[self.banded]
        return float(worst.max())

    def _shifted(self, stocks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        over, under = self._gaps(stocks, self.margin)
        mask = self.banded[:, None]
        return (np.maximum(self.lam_up + self.rho * over, 0.0) * mask,
                np.maximum(self.lam_lo + self.rho * under, 0.0) * mask)

    def update_multipliers(self, stocks: np.ndarray) -> None:
        self.lam_up, self.lam_lo = self._shifted(stocks)

    def catch(self, u: np.ndarray, stocks: np.ndarray) -> float:
        return float(self.gamma * np.sum(u * stocks[:-1].T))

    def merit(self, u: np.ndarray, stocks: np.ndarray) -> float:
        value = self.catch(u, stocks)
        if self.mu > 0:
            value -= self.mu * self._virtual_distance(u)
        return value

    def _virtual_distance(self, u: np.ndarray) -> float:
        # sum_k ||u_0 - v_k||^2 over the coalition's members
        u0 = u[:, 0]
        return float(self.size * u0 @ u0 - 2 * u0 @ self.virtual_sum + self.virtual_sq)

    def value(self, u: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        stocks, active = self.rollout(u)
        value = self.merit(u, stocks)
        if self.band_on:
            s_up, s_lo = self._shifted(stocks)
            value -= float(np.sum(s_up ** 2 - self.lam_up ** 2)
                           + np.sum(s_lo ** 2 - self.lam_lo ** 2)) / (2 * self.rho)
        return value, stocks, active

    def gradient(self, u: np.ndarray, stocks: np.ndarray, active: np.ndarray) -> np.ndarray:
        horizon = u.shape[1]
        grad = np.empty_like(u)
        if self.band_on:
            s_up, s_lo = self._shifted(stocks)
            # slope of the band term in x_1..x_T
            pull = s_up - s_lo
        else:
            pull = np.zeros((horizon, u.shape[0]))
        lam = -pull[horizon - 1]
        for t in range(horizon - 1, -1, -1):
            carried = lam * active[t]
            grad[:, t] = self.gamma * stocks[t] * (1.0 - carried)
            pressure = self.gamma * u[:, t] + self.others[:, t]
            lam = self.gamma * u[:, t] + carried * (self.params.survival - pressure)
            if t > 0:
                lam = lam - pull[t - 1]
        if self.mu > 0:
            grad[:, 0] -= 2 * self.mu * (self.size * u[:, 0] - self.virtual_sum)
        return grad


@dataclass
class _Candidate:
    u: np.ndarray
    stocks: np.ndarray
    violation: float
    merit: float
    converged: bool = True
    iterations: int = 0


def _ascend(problem: _Problem, u: np.ndarray, cfg: MpcConfig) -> Tuple[np.ndarray, bool, int]:
    """Projected-gradient ascent with Armijo backtracking along the projection arc"""
    value, stocks, active = problem.value(u)
    step = None
    for it in range(1, cfg.solver_max_steps + 1):
        grad = problem.gradient(u, stocks, active)
        if step is None:
            step = 1.0 / (np.abs(grad).max() + 1e-12)
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            candidate = _project_columns(u + step * grad)
            cand_value, cand_stocks, cand_active = problem.value(candidate)
            if cand_value >= value + _ARMIJO * float(np.sum(grad * (candidate - u))):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return u, True, it
        moved = float(np.abs(candidate - u).max())
        gain = cand_value - value
        u, value, stocks, active = candidate, cand_value, cand_stocks, cand_active
        if moved < cfg.solver_step_tol or gain <= cfg.solver_gain_tol * max(1.0, abs(value)):
            return u, True, it
        step *= 2.0
    return u, False, cfg.solver_max_steps


def _solve_from(problem: _Problem, start: np.ndarray, cfg: MpcConfig) -> _Candidate:
    """Augmented-Lagrangian rounds from one starting schedule"""
    problem.reset_multipliers(cfg.penalty_weight)
    u = start.copy()
    converged, iterations = False, 0
    rounds = cfg.penalty_rounds if problem.band_on else 1
    previous = np.inf
    for _ in range(rounds):
        u, converged, steps = _ascend(problem, u, cfg)
        iterations += steps
        stocks, _ = problem.rollout(u)
        if problem.violation(stocks) <= cfg.band_tol:
            break
        shortfall = problem.violation(stocks, tightened=True)
        problem.update_multipliers(stocks)
        if shortfall > 0.25 * previous:
            problem.rho *= cfg.penalty_growth
        previous = shortfall
    return _Candidate(u, stocks, problem.violation(stocks), problem.merit(u, stocks),
                      converged, iterations)


def _pick(candidates: List[_Candidate], band_tol: float) -> _Candidate:
    """Best merit among band-feasible candidates, else the smallest violation"""
    feasible = [c for c in candidates if c.violation <= band_tol]
    if feasible:
        return max(feasible, key=lambda c: c.merit)
    return min(candidates, key=lambda c: c.violation)


def _coalition_objectives(structure_blocks, effort: np.ndarray, stocks: np.ndarray,
                          params: ModelParams) -> Dict[Block, float]:
    # per-boat catch over the horizon: gamma_k * sum_t e_k(t) . x_t
    per_boat = params.catchability * np.einsum("kit,ti->k", effort, stocks[:-1])
    return {block: float(per_boat[list(block)].sum()) for block in structure_blocks}


def solve_coalition(structure: "CoalitionStructure", target: Block,
                    fixed_efforts: Optional[EffortSchedule], state: StockState,
                    params: ModelParams, cfg: MpcConfig, warm_start: EffortSchedule,
                    anchor: Optional[np.ndarray] = None,
                    virtual: Optional[np.ndarray] = None, mu: float = 0.0,
                    greedy_start: bool = False) -> MpcSolution:
    """
    Optimize the shared schedule of the coalition `target`.

    Args:
        structure: Current coalition structure; `target` must be one of its blocks
        target: Coalition being optimized
        fixed_efforts: Broadcast schedules of everybody else, or None when
            the others are assumed not to fish (no communication)
        state: Current stock
        params: Model parameters
        cfg: Solver and band configuration
        warm_start: Initial guess; the coalition's rows are averaged into one
        anchor: Band centre x^eq, defaults to the terminal stock predicted
            under the warm start
        virtual: K×N virtual effort vectors for the clustering penalty
        mu: Weight of the virtual effort penalty on the step-0 efforts
        greedy_start: Also ascend from the richest-region schedule and keep
            the better of the two

    Returns:
        MpcSolution whose schedule has `target`'s rows replaced

    Raises:
        InfeasibleBandError: strict band policy and no candidate meets the band
        SolverError: the iterates stopped being finite
    """
    target = tuple(sorted(target))
    if target not in structure.blocks:
        raise ValidationError(f"{block_label(target)} is not a block of the structure")
    if warm_start.horizon != cfg.horizon:
        raise ValidationError(f"warm start horizon {warm_start.horizon} != configured {cfg.horizon}")
    if warm_start.n_boats != params.n_boats or warm_start.n_regions != params.n_regions:
        raise ValidationError("warm start does not match the model dimensions")
    if fixed_efforts is not None and fixed_efforts.effort.shape != warm_start.effort.shape:
        raise ValidationError("fixed efforts do not match the warm start shape")

    members = list(target)
    outside = [k for k in range(params.n_boats) if k not in target]
    if fixed_efforts is None or not outside:
        others = np.zeros((params.n_regions, cfg.horizon))
    else:
        others = np.einsum("k,kit->it", params.catchability[outside], fixed_efforts.effort[outside])

    problem = _Problem(
        params=params,
        x0=np.asarray(state.stock, dtype=float),
        gamma=float(params.catchability[members].sum()),
        others=others,
        banded=cfg.banded_steps(),
        mu=float(mu) if virtual is not None else 0.0,
        size=len(members),
    )
    if problem.mu > 0:
        v = np.asarray(virtual, dtype=float)[members]
        problem.virtual_sum = v.sum(axis=0)
        problem.virtual_sq = float(np.sum(v * v))

    warm_u = _project_columns(warm_start.effort[members].mean(axis=0))
    warm_stocks, _ = problem.rollout(warm_u)
    anchor = warm_stocks[-1] if anchor is None else np.asarray(anchor, dtype=float)
    problem.set_band(*cfg.band(anchor))
    warm = _Candidate(warm_u, warm_stocks, problem.violation(warm_stocks),
                      problem.merit(warm_u, warm_stocks))

    starts = [warm_u]
    if greedy_start:
        starts.append(problem.greedy(cfg.horizon))
    try:
        solved = [_solve_from(problem, start, cfg) for start in starts]
    except FloatingPointError as exc:
        raise SolverError(f"numerical failure: {exc}", target) from exc

    # never hand back something worse than the warm start it was given
    best = _pick(solved + [warm], cfg.band_tol)
    u, stocks, violation = best.u, best.stocks, best.violation
    converged = all(c.converged for c in solved)
    iterations = sum(c.iterations for c in solved)

    band_ok = violation <= cfg.band_tol
    if not band_ok:
        if cfg.band_policy == BandPolicy.STRICT:
            raise InfeasibleBandError(
                f"sustainability band unreachable on day {state.day} "
                f"(worst violation {violation:.3g} fish)", target, violation
            )
        logger.debug("Band violated by %.3g fish for %s on day %d",
                     violation, block_label(target), state.day)

    effort = np.array(fixed_efforts.effort if fixed_efforts is not None else warm_start.effort)
    effort[members] = u
    schedule = EffortSchedule(effort)

    if fixed_efforts is None:
        objectives = {target: problem.catch(u, stocks)}
    else:
        objectives = _coalition_objectives(structure.blocks, schedule.effort, stocks, params)

    if not converged:
        logger.debug("Solver hit %d steps for %s", cfg.solver_max_steps, block_label(target))

    return MpcSolution(
        target=target,
        schedule=schedule,
        trajectory=stocks,
        equilibrium_stock=stocks[-1].copy(),
        objective_per_coalition=objectives,
        converged=converged and band_ok,
        band_satisfied=band_ok,
        band_violation=violation,
        iterations=iterations,
    )


def _tie_blocks(effort: np.ndarray, blocks) -> np.ndarray:
    """Average each block's rows so coalition members start identical"""
    effort = np.array(effort)
    for block in blocks:
        if len(block) > 1:
            members = list(block)
            effort[members] = _project_columns(effort[members].mean(axis=0))
    return effort


def solve_structure(structure: "CoalitionStructure", state: StockState, params: ModelParams,
                    cfg: MpcConfig, comm_mode: CommMode = CommMode.CROSS,
                    warm_start: Optional[EffortSchedule] = None,
                    anchor: Optional[Anchor] = None,
                    virtual: Optional[np.ndarray] = None, mu: float = 0.0) -> StructureSolution:
    """
    Sequential equilibrium loop over the coalitions of a structure.

    With cross-coalition communication every coalition re-optimizes against
    the latest broadcast schedules of the others, sweep after sweep, until no
    objective moves by more than `convergence_tol` or `max_outer_iterations`
    sweeps ran. Without communication each coalition solves once assuming
    nobody else fishes. A single-coalition structure always runs one sweep.

    `anchor` is either one band centre for everybody or a mapping from
    block to its own centre, as returned by `StructureSolution.next_anchor`.
    Blocks missing from the mapping centre on their warm start.
    """
    comm_mode = CommMode(comm_mode)
    blocks = structure.blocks
    cold = warm_start is None
    if cold:
        warm_start = EffortSchedule.uniform(params.n_boats, params.n_regions, cfg.horizon)
    working = EffortSchedule(_tie_blocks(warm_start.effort, blocks))
    per_block = isinstance(anchor, Mapping)
    shared = None if anchor is None or per_block else np.array(anchor, dtype=float)

    sweeps_allowed = 1 if len(blocks) == 1 or comm_mode == CommMode.NONE else cfg.max_outer_iterations
    solutions: Dict[Block, MpcSolution] = {}
    previous: Dict[Block, float] = {}
    sweeps = 0
    for sweep in range(sweeps_allowed):
        sweeps += 1
        for block in blocks:
            fixed = working if comm_mode == CommMode.CROSS else None
            sol = solve_coalition(structure, block, fixed, state, params, cfg,
                                  warm_start=working,
                                  anchor=anchor.get(block) if per_block else shared,
                                  virtual=virtual, mu=mu, greedy_start=cold and sweep == 0)
            solutions[block] = sol
            if comm_mode == CommMode.CROSS:
                working = sol.schedule
                if not per_block:
                    shared = sol.equilibrium_stock
            else:
                effort = np.array(working.effort)
                effort[list(block)] = sol.schedule.effort[list(block)]
                working = EffortSchedule(effort)
        current = {block: sol.objective for block, sol in solutions.items()}
        if previous and all(abs(current[b] - previous[b]) <= cfg.convergence_tol for b in blocks):
            break
        previous = current

    # Anchor for the next solve: terminal stock under the composed schedule
    composed, _ = predict_stocks(state.stock, working.effort, params)
    return StructureSolution(
        solutions=solutions,
        schedule=working,
        equilibrium_stock=composed[-1].copy(),
        sweeps=sweeps,
        comm_mode=comm_mode,
    )
