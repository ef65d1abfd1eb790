from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Dict, Any, List

class Settings(BaseSettings):
    # MPC horizon and sustainability band
    HORIZON: int = 30
    # Band half-width as a fraction of the anchor stock, per region
    RADIUS_FRACTION: float = 0.25
    # "soft" keeps running on an unreachable band, "strict" raises
    BAND_POLICY: str = "soft"
    # "terminal" bounds the horizon-end stock, "every_step" every predicted stock
    BAND_SCOPE: str = "terminal"
    # Largest band miss in fish still counted as met
    BAND_TOL: float = 1e-3
    PENALTY_WEIGHT: float = 1e-2
    PENALTY_GROWTH: float = 10.0
    PENALTY_ROUNDS: int = 10

    # Solver
    MAX_OUTER_ITERATIONS: int = 3
    CONVERGENCE_TOL: float = 1e-3
    SOLVER_MAX_STEPS: int = 200
    SOLVER_STEP_TOL: float = 1e-6
    SOLVER_GAIN_TOL: float = 1e-8

    # Simulation cadence
    TOTAL_DAYS: int = 720
    EPOCH_DAYS: int = 30
    MAX_BLOCK_SIZE: int = 3

    # Heuristic (hierarchical clustering) trade-offs
    HEURISTIC_MU: float = 0.001
    HEURISTIC_GAMMA: float = 1.0
    MERGE_THRESHOLD: float = 1e-2
    HEURISTIC_MAX_ITERATIONS: int = 5

    # Runtime
    WORKERS: int = 1
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="FLEET_", extra="ignore")

settings = Settings()

# Built-in instance: four regions, six boats
DEFAULT_INSTANCE: Dict[str, Any] = {
    "inflow": [300.0, 450.0, 350.0, 200.0],
    "survival": [0.2, 0.3, 0.45, 0.6],
    "catchability": [0.08, 0.1, 0.12, 0.15, 0.20, 0.28],
    "initial_stock": [200.0, 300.0, 150.0, 250.0],
}

# Fleet sizes of the timing grid (regions stay at four)
BENCHMARK_SIZES: List[int] = [6, 12, 18, 24]

STRATEGIES: List[str] = ["grand", "isolated", "controlled", "accelerated"]

# Process exit codes of the command-line front end
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4
