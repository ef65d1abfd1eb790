from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import settings
from .model import SIMPLEX_TOL

CONSERVATION_TOL = 1e-9


class InvariantChecks:
    """
    Validation checks over schedules, structures and catch records.
    Every check returns a list of issue codes; an empty list means clean.
    """

    def __init__(self, simplex_tol: float = SIMPLEX_TOL, conservation_tol: float = CONSERVATION_TOL):
        self.simplex_tol = simplex_tol
        self.conservation_tol = conservation_tol

    def effort_checks(self, effort: np.ndarray) -> List[str]:
        """Simplex feasibility of efforts of shape K×N or K×N×T"""
        issues = []
        effort = np.asarray(effort, dtype=float)

        if not np.all(np.isfinite(effort)):
            issues.append("NON_FINITE_EFFORT")
            return issues

        if np.any(effort < -self.simplex_tol):
            issues.append("NEGATIVE_EFFORT")

        # Regions sit on axis 1
        totals = effort.sum(axis=1)
        if np.any(np.abs(totals - 1.0) > self.simplex_tol):
            issues.append("EFFORT_NOT_ON_SIMPLEX")

        return issues

    def coalition_equality(self, effort: np.ndarray, blocks: Sequence[Sequence[int]]) -> List[str]:
        """Boats of one coalition must share one schedule"""
        issues = []
        effort = np.asarray(effort, dtype=float)
        for block in blocks:
            if len(block) < 2:
                continue
            members = effort[list(block)]
            if np.max(np.abs(members - members[0])) > self.simplex_tol:
                issues.append("COALITION_EFFORT_MISMATCH")
                break
        return issues

    def partition_checks(self, blocks: Sequence[Sequence[int]], n_boats: int,
                         max_block_size: Optional[int] = None) -> List[str]:
        """Partition validity and the block-size cap"""
        issues = []
        cap = settings.MAX_BLOCK_SIZE if max_block_size is None else max_block_size

        members = [b for block in blocks for b in block]
        if any(len(block) == 0 for block in blocks):
            issues.append("EMPTY_COALITION")
        if len(members) != len(set(members)):
            issues.append("OVERLAPPING_COALITIONS")
        if sorted(set(members)) != list(range(n_boats)):
            issues.append("INCOMPLETE_PARTITION")
        if any(len(block) > cap for block in blocks):
            issues.append("BLOCK_EXCEEDS_CAP")

        return issues

    def conservation_checks(self, raw: np.ndarray, attributed: np.ndarray) -> List[str]:
        """Attributed catch must add up to the raw catch, day by day"""
        issues = []
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        attributed = np.atleast_2d(np.asarray(attributed, dtype=float))

        if raw.shape != attributed.shape:
            issues.append("CATCH_SHAPE_MISMATCH")
            return issues

        gap = np.abs(raw.sum(axis=1) - attributed.sum(axis=1))
        scale = np.maximum(1.0, np.abs(raw.sum(axis=1)))
        if np.any(gap > self.conservation_tol * scale):
            issues.append("CATCH_NOT_CONSERVED")
        if np.any(attributed < -self.conservation_tol):
            issues.append("NEGATIVE_ATTRIBUTED_CATCH")

        return issues

    def trace_checks(self, trace: Any) -> Dict[str, List[str]]:
        """All checks over a simulation trace, keyed by check family"""
        # days × boats × regions
        efforts = np.asarray(trace.efforts)
        result = {
            "effort": self.effort_checks(np.moveaxis(efforts, 0, -1)) if efforts.size else [],
            "conservation": self.conservation_checks(trace.raw_catch, trace.attributed_catch)
            if len(trace.raw_catch) else [],
            "partition": [],
            "coalition": [],
        }

        capped = trace.strategy != "grand"
        for snapshot in trace.structures:
            cap = snapshot.max_block_size if capped else snapshot.n_boats
            result["partition"].extend(self.partition_checks(snapshot.blocks, snapshot.n_boats, cap))

        for day, blocks in enumerate(trace.day_blocks):
            result["coalition"].extend(self.coalition_equality(efforts[day], blocks))

        return {family: sorted(set(codes)) for family, codes in result.items()}
