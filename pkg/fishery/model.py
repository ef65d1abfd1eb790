import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from config import DEFAULT_INSTANCE
from .errors import ValidationError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-8


def _vector(name: str, values: Sequence[float], length: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape[0] != length:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModelParams:
    """
    Physical parameters of the fishery: N regions with linear stock dynamics
    and K boats with their own catchability.
    """

    n_regions: int
    n_boats: int
    inflow: np.ndarray
    survival: np.ndarray
    catchability: np.ndarray
    initial_stock: np.ndarray

    def __post_init__(self):
        if self.n_regions < 1 or self.n_boats < 1:
            raise ValidationError(
                f"need at least one region and one boat, got N={self.n_regions} K={self.n_boats}"
            )
        object.__setattr__(self, "inflow", _vector("inflow", self.inflow, self.n_regions))
        object.__setattr__(self, "survival", _vector("survival", self.survival, self.n_regions))
        object.__setattr__(self, "catchability", _vector("catchability", self.catchability, self.n_boats))
        object.__setattr__(self, "initial_stock", _vector("initial_stock", self.initial_stock, self.n_regions))

        if np.any(self.inflow < 0):
            raise ValidationError("inflow must be non-negative")
        if np.any((self.survival < 0) | (self.survival > 1)):
            raise ValidationError("survival rates must lie in [0, 1]")
        if np.any((self.catchability <= 0) | (self.catchability > 1)):
            raise ValidationError("catchability must lie in (0, 1]")
        if np.any(self.initial_stock < 0):
            raise ValidationError("initial stock must be non-negative")

    @classmethod
    def from_lists(cls, inflow: Sequence[float], survival: Sequence[float],
                   catchability: Sequence[float], initial_stock: Sequence[float]) -> "ModelParams":
        return cls(
            n_regions=len(inflow),
            n_boats=len(catchability),
            inflow=inflow,
            survival=survival,
            catchability=catchability,
            initial_stock=initial_stock,
        )

    @classmethod
    def default(cls) -> "ModelParams":
        """The built-in four-region, six-boat instance"""
        return cls.from_lists(**DEFAULT_INSTANCE)

    @classmethod
    def scaled(cls, n_boats: int) -> "ModelParams":
        """
        Four-region instance with `n_boats` boats for the timing grid.

        Catchabilities cycle through the default fleet; inflows and initial
        stocks grow with K/6 so each boat sees the same abundance.
        """
        if n_boats < 1:
            raise ValidationError(f"n_boats must be positive, got {n_boats}")
        base = DEFAULT_INSTANCE["catchability"]
        factor = n_boats / len(base)
        return cls.from_lists(
            inflow=[a * factor for a in DEFAULT_INSTANCE["inflow"]],
            survival=DEFAULT_INSTANCE["survival"],
            catchability=[base[k % len(base)] for k in range(n_boats)],
            initial_stock=[x * factor for x in DEFAULT_INSTANCE["initial_stock"]],
        )


@dataclass(frozen=True)
class StockState:
    """Fish stock per region at a given day"""

    stock: np.ndarray
    day: int = 0
    clamped: bool = False

    def __post_init__(self):
        arr = np.asarray(self.stock, dtype=float).reshape(-1)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValidationError("stock must be finite and non-negative")
        if self.day < 0:
            raise ValidationError(f"day must be non-negative, got {self.day}")
        arr.setflags(write=False)
        object.__setattr__(self, "stock", arr)

    @classmethod
    def initial(cls, params: ModelParams) -> "StockState":
        return cls(stock=params.initial_stock.copy(), day=0)


@dataclass(frozen=True)
class EffortSchedule:
    """
    Effort fractions e[k][i][t] (boat × region × horizon step).
    Every (k, t) row is a point of the probability simplex.
    """

    effort: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.effort, dtype=float)
        if arr.ndim != 3:
            raise ValidationError(f"effort must be a 3-axis array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("effort contains non-finite values")
        if arr.size and arr.min() < -SIMPLEX_TOL:
            raise ValidationError(f"negative effort {arr.min():.3g}")
        if arr.shape[2] > 0:
            sums = arr.sum(axis=1)
            worst = float(np.abs(sums - 1.0).max())
            if worst > SIMPLEX_TOL:
                raise ValidationError(f"effort rows must sum to 1 (worst deviation {worst:.3g})")
        arr.setflags(write=False)
        object.__setattr__(self, "effort", arr)

    @property
    def n_boats(self) -> int:
        return self.effort.shape[0]

    @property
    def n_regions(self) -> int:
        return self.effort.shape[1]

    @property
    def horizon(self) -> int:
        return self.effort.shape[2]

    @classmethod
    def uniform(cls, n_boats: int, n_regions: int, horizon: int) -> "EffortSchedule":
        return cls(np.full((n_boats, n_regions, horizon), 1.0 / n_regions))

    def at(self, t: int) -> np.ndarray:
        """Effort matrix K×N applied at horizon step t"""
        return self.effort[:, :, t]

    def first_step(self) -> np.ndarray:
        return self.at(0)

    def shifted(self) -> "EffortSchedule":
        """Drop step 0 and repeat the final step (next day's warm start)"""
        if self.horizon <= 1:
            return self
        arr = np.concatenate([self.effort[:, :, 1:], self.effort[:, :, -1:]], axis=2)
        return EffortSchedule(arr)

    def max_block_spread(self, blocks: Sequence[Sequence[int]]) -> float:
        """Largest effort difference between two boats of the same block"""
        spread = 0.0
        for block in blocks:
            rows = self.effort[list(block)]
            if len(block) > 1:
                spread = max(spread, float(np.abs(rows - rows[0]).max()))
        return spread


def _check_effort(effort_today: np.ndarray, params: ModelParams) -> np.ndarray:
    effort = np.asarray(effort_today, dtype=float)
    if effort.shape != (params.n_boats, params.n_regions):
        raise ValidationError(
            f"effort matrix has shape {effort.shape}, expected ({params.n_boats}, {params.n_regions})"
        )
    return effort


def _check_stock(stock: np.ndarray, params: ModelParams) -> None:
    if stock.shape[0] != params.n_regions:
        raise ValidationError(
            f"stock has {stock.shape[0]} regions, expected {params.n_regions}"
        )


def step_dynamics(state: StockState, effort_today: np.ndarray, params: ModelParams) -> StockState:
    """
    Advance the stock by one day:
    x_i(t+1) = A_i + B_i x_i(t) - sum_k gamma_k e_ki x_i(t), clamped at zero.
    """
    effort = _check_effort(effort_today, params)
    _check_stock(state.stock, params)

    pressure = params.catchability @ effort
    nxt = params.inflow + (params.survival - pressure) * state.stock
    clamped = bool(np.any(nxt < 0))
    if clamped:
        logger.warning(
            "Stock overdrawn on day %d in regions %s, clamped to 0",
            state.day, np.flatnonzero(nxt < 0).tolist()
        )
        nxt = np.maximum(nxt, 0.0)
    return StockState(stock=nxt, day=state.day + 1, clamped=clamped)


def catch_per_boat(state: StockState, effort_today: np.ndarray, params: ModelParams) -> np.ndarray:
    """Fish removed by each boat today: gamma_k * sum_i e_ki x_i"""
    effort = _check_effort(effort_today, params)
    _check_stock(state.stock, params)
    return params.catchability * (effort @ state.stock)


def roll_horizon(state: StockState, schedule: EffortSchedule,
                 params: ModelParams) -> Tuple[List[StockState], np.ndarray]:
    """
    Apply a whole schedule from `state`.

    Returns the T+1 visited states and the K×T matrix of per-boat catch,
    where column t is taken at trajectory[t].
    """
    if schedule.n_boats != params.n_boats or schedule.n_regions != params.n_regions:
        raise ValidationError(
            f"schedule is {schedule.n_boats}x{schedule.n_regions}, "
            f"params are {params.n_boats}x{params.n_regions}"
        )
    trajectory = [state]
    catches = np.zeros((params.n_boats, schedule.horizon))
    for t in range(schedule.horizon):
        effort = schedule.at(t)
        catches[:, t] = catch_per_boat(trajectory[-1], effort, params)
        trajectory.append(step_dynamics(trajectory[-1], effort, params))
    return trajectory, catches


def predict_stocks(stock: np.ndarray, effort: np.ndarray, params: ModelParams,
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Array form of `roll_horizon` used inside the solver.

    `effort` is K×N×T. Returns stocks (T+1)×N and a T×N mask that is True
    where the step did not clamp.
    """
    horizon = effort.shape[2]
    stocks = np.empty((horizon + 1, params.n_regions))
    active = np.ones((horizon, params.n_regions), dtype=bool)
    stocks[0] = stock
    for t in range(horizon):
        pressure = params.catchability @ effort[:, :, t]
        nxt = params.inflow + (params.survival - pressure) * stocks[t]
        active[t] = nxt > 0
        stocks[t + 1] = np.where(active[t], nxt, 0.0)
    return stocks, active
