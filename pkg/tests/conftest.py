import numpy as np
import pytest

from fishery.model import ModelParams, StockState, predict_stocks
from fishery.mpc import BandPolicy, MpcConfig


@pytest.fixture
def default_params():
    return ModelParams.default()


@pytest.fixture
def small_params():
    # Region 1 is rich today, region 2 refills faster
    return ModelParams.from_lists(
        inflow=[100.0, 400.0],
        survival=[0.3, 0.3],
        catchability=[0.1, 0.15, 0.2],
        initial_stock=[400.0, 100.0],
    )


@pytest.fixture
def pooled_params():
    # Region 1 refills and stays the richest tomorrow; fishing it today
    # costs every boat tomorrow. A block with catchability below 0.4 fishes
    # it anyway, a larger one waits, so every partition catches differently.
    return ModelParams.from_lists(
        inflow=[500.0, 0.0],
        survival=[1.0, 0.8],
        catchability=[0.2, 0.25, 0.3],
        initial_stock=[1000.0, 600.0],
    )


@pytest.fixture
def fast_cfg():
    return MpcConfig(horizon=2, band_policy=BandPolicy.OFF, max_outer_iterations=10,
                     convergence_tol=1e-6)


@pytest.fixture
def start(small_params):
    return StockState.initial(small_params)


def block_catch(params, stock, effort, block):
    """Horizon catch of `block` under a full K×N×T effort array"""
    stocks, _ = predict_stocks(stock, effort, params)
    per_boat = params.catchability * np.einsum("kit,ti->k", effort, stocks[:-1])
    return float(per_boat[list(block)].sum())


def grid_best_response(params, stock, effort, block, step=0.05):
    """
    Best catch of `block` over a grid of shared two-region, two-step
    schedules with everybody else frozen
    """
    grid = np.round(np.arange(0.0, 1.0 + 1e-9, step), 10)
    best = -np.inf
    trial = np.array(effort, dtype=float)
    for a in grid:
        for b in grid:
            trial[list(block), :, 0] = (a, 1.0 - a)
            trial[list(block), :, 1] = (b, 1.0 - b)
            best = max(best, block_catch(params, stock, trial, block))
    return best
