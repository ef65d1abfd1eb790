import os
import time
from typing import Iterable, Optional, Sequence, Tuple

from config import settings
from .errors import BudgetExceeded

# A coalition is identified by the sorted tuple of its boat indices
Block = Tuple[int, ...]


def block_label(block: Sequence[int]) -> str:
    """Human-readable 1-based label, e.g. (0, 2) -> '{1,3}'"""
    return "{" + ",".join(str(b + 1) for b in block) + "}"


def structure_label(blocks: Iterable[Sequence[int]]) -> str:
    return " ".join(block_label(b) for b in blocks)


def ensure_output_dir(path: str) -> str:
    """
    Create the output directory if needed and check it is writable

    Args:
        path: Directory that will receive run artifacts

    Returns:
        Absolute path of the directory
    """
    path = os.path.abspath(path)
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"Output directory is not writable: {path}")
    return path


def worker_count(requested: Optional[int] = None) -> int:
    """Worker processes for independent runs (FLEET_WORKERS by default)"""
    count = requested if requested is not None else settings.WORKERS
    return max(1, min(int(count), os.cpu_count() or 1))


class Budget:
    """
    Cooperative wall-clock budget. Long loops call `check()` between
    units of work; the first call past the deadline raises BudgetExceeded.
    """

    def __init__(self, seconds: Optional[float] = None):
        self.seconds = seconds
        self.started = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def check(self) -> None:
        if self.seconds is not None and self.elapsed > self.seconds:
            raise BudgetExceeded(f"budget of {self.seconds:g}s exhausted after {self.elapsed:.2f}s")


def check_budget(budget: Optional[Budget]) -> None:
    if budget is not None:
        budget.check()
