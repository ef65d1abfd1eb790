"""
Accelerated coalition control by hierarchical clustering.

Every boat carries a virtual effort vector; boats whose virtual vectors
coincide form a coalition. Virtual vectors and real efforts are solved
alternately: the virtual step has a closed-form stationary point, the
real step is the usual horizon solve with a pull towards the virtual
vectors.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, NamedTuple, Optional

import numpy as np
from pydantic import Field
from scipy.spatial.distance import pdist

from config import settings
from .coalition import CoalitionStructure, EpochSolver, split_pass
from .decision import DecisionEngine, DecisionLog, ProtocolMode, merge_ratios
from .errors import ValidationError
from .model import EffortSchedule, ModelParams, StockState
from .mpc import Anchor, CommMode, MpcConfig, StructureSolution, solve_structure
from .utils import Block, Budget, check_budget, structure_label

logger = logging.getLogger(__name__)


class HeuristicConfig(MpcConfig):
    mu: float = Field(default_factory=lambda: settings.HEURISTIC_MU, gt=0)
    gamma_tradeoff: float = Field(default_factory=lambda: settings.HEURISTIC_GAMMA, gt=0)
    merge_threshold: float = Field(default_factory=lambda: settings.MERGE_THRESHOLD, ge=0)
    max_iterations: int = Field(default_factory=lambda: settings.HEURISTIC_MAX_ITERATIONS, ge=1)


@dataclass(frozen=True, eq=False)
class VirtualEfforts:
    """One virtual effort vector per boat (K×N)"""

    vectors: np.ndarray

    def __post_init__(self):
        arr = np.array(self.vectors, dtype=float)
        if arr.ndim != 2:
            raise ValidationError(f"virtual efforts must be K×N, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("virtual efforts contain non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)

    @classmethod
    def from_efforts(cls, efforts: np.ndarray) -> "VirtualEfforts":
        return cls(np.array(efforts, dtype=float))

    def classes(self) -> List[Block]:
        """Equality classes of the virtual vectors, in canonical order"""
        groups: Dict[bytes, List[int]] = {}
        for k, row in enumerate(self.vectors):
            groups.setdefault(row.tobytes(), []).append(k)
        return sorted((tuple(members) for members in groups.values()), key=lambda b: b[0])

    def to_structure(self, max_block_size: Optional[int] = None) -> CoalitionStructure:
        n_boats = self.vectors.shape[0]
        classes = self.classes()
        cap = max(max_block_size or settings.MAX_BLOCK_SIZE, max(len(c) for c in classes))
        return CoalitionStructure(tuple(classes), n_boats, max_block_size=cap)


class ClusterResult(NamedTuple):
    structure: CoalitionStructure
    virtual: VirtualEfforts
    evaluations: int


@dataclass
class HeuristicEpoch:
    """Outcome of one clustering epoch"""

    structure: CoalitionStructure
    solution: StructureSolution
    objectives: List[float] = field(default_factory=list)
    distance_evaluations: int = 0
    iterations: int = 0


def update_virtual(efforts: np.ndarray, virtual: VirtualEfforts, cfg: HeuristicConfig) -> VirtualEfforts:
    """
    Stationary point of mu * sum_k ||e_k - v_k||^2 + gamma * sum_{k<l} ||v_k - v_l||^2
    with each boat coupled only to the vectors that differ from its own:

        (mu + gamma |V_k|) v_k - gamma * sum_{l in V_k} v_l = mu e_k

    The linear system is strictly diagonally dominant, so it is solved
    directly instead of sweeping boat by boat to the same fixed point.
    """
    e = np.asarray(efforts, dtype=float)
    v = virtual.vectors
    if e.shape != v.shape:
        raise ValidationError(f"efforts {e.shape} and virtual vectors {v.shape} differ in shape")
    mu, gamma = cfg.mu, cfg.gamma_tradeoff
    n_boats = e.shape[0]

    neighbours = np.array([[not np.array_equal(v[k], v[l]) for l in range(n_boats)]
                           for k in range(n_boats)])
    system = -gamma * neighbours.astype(float)
    system[np.diag_indices(n_boats)] = mu + gamma * neighbours.sum(axis=1)
    return VirtualEfforts(np.linalg.solve(system, mu * e))


def cluster_by_distance(virtual: VirtualEfforts, threshold: float, current: CoalitionStructure,
                        objectives: Optional[Mapping[Block, float]] = None) -> ClusterResult:
    """
    One agglomerative level: block pairs whose representative virtual
    vectors are closer than `threshold` (squared Euclidean distance) merge,
    closest pairs first, each block at most once, never beyond the cap.
    Merged boats take the mean of their virtual vectors.
    """
    blocks = current.blocks
    vectors = np.array(virtual.vectors)
    if len(blocks) < 2:
        return ClusterResult(current, VirtualEfforts(vectors), 0)

    reps = vectors[[block[0] for block in blocks]]
    distances = pdist(reps, metric="sqeuclidean")
    pairs = sorted(
        (float(d), i, j) for d, (i, j) in zip(distances, combinations(range(len(blocks)), 2))
        if d < threshold
    )

    merged = current
    used = set()
    for dist, i, j in pairs:
        if i in used or j in used:
            continue
        a, b = blocks[i], blocks[j]
        if len(a) + len(b) > current.max_block_size:
            continue
        if objectives is not None:
            r_a, _ = merge_ratios(objectives.get(a, 0.0), objectives.get(b, 0.0), len(a), len(b))
        else:
            r_a = len(a) / (len(a) + len(b))
        merged = merged.merge(a, b, r_a)
        members = list(a + b)
        vectors[members] = vectors[members].mean(axis=0)
        used.update((i, j))
        logger.debug("Clustered %s and %s at distance %.3g", a, b, dist)

    return ClusterResult(merged, VirtualEfforts(vectors), len(distances))


def solve_penalized(virtual: VirtualEfforts, state: StockState, params: ModelParams,
                    cfg: HeuristicConfig, *, structure: Optional[CoalitionStructure] = None,
                    warm_start: Optional[EffortSchedule] = None, anchor: Optional[Anchor] = None,
                    mu: Optional[float] = None) -> StructureSolution:
    """
    Real-effort step: the horizon solve of the structure induced by the
    virtual vectors, with -O_E + mu * sum_k ||e_k - v_k||^2 as objective.
    `mu` overrides the configured weight (0 switches the pull off).
    """
    structure = structure or virtual.to_structure()
    weight = cfg.mu if mu is None else mu
    if weight < 0:
        raise ValidationError(f"mu must be non-negative, got {weight}")
    return solve_structure(structure, state, params, cfg, CommMode.CROSS, warm_start=warm_start,
                           anchor=anchor, virtual=virtual.vectors, mu=weight)


def run_heuristic_epoch(structure: CoalitionStructure, state: StockState, params: ModelParams,
                        cfg: HeuristicConfig, *, mode: ProtocolMode = ProtocolMode.WITH_REDISTRIBUTION,
                        solver: Optional[EpochSolver] = None, log: Optional[DecisionLog] = None,
                        budget: Optional[Budget] = None) -> HeuristicEpoch:
    """
    Alternate virtual-vector updates, clustering and penalized solves until
    the predicted catch stops increasing or `max_iterations` is reached.
    With gamma_tradeoff below one the epoch ends with a split sweep.
    """
    solver = solver or EpochSolver(state, params, cfg, budget=budget)
    engine = DecisionEngine(mode, log)
    base = solver.solve(structure)
    best = base.total_objective
    outcome = HeuristicEpoch(structure=structure, solution=base, objectives=[best])

    current = structure
    # V = E once per epoch; afterwards the clustered vectors carry over
    virtual = VirtualEfforts.from_efforts(base.schedule.first_step())
    for it in range(cfg.max_iterations):
        check_budget(budget)
        outcome.iterations = it + 1
        virtual = update_virtual(base.schedule.first_step(), virtual, cfg)
        clustered = cluster_by_distance(virtual, cfg.merge_threshold, current, base.objectives)
        outcome.distance_evaluations += clustered.evaluations
        if clustered.structure.key == current.key:
            break

        candidate = solve_penalized(clustered.virtual, state, params, cfg,
                                    structure=clustered.structure, warm_start=base.schedule,
                                    anchor=solver.anchor)
        value = candidate.total_objective
        engine.log.append(engine.cluster_record(
            epoch=structure.epoch, day=state.day, before=current.label,
            after=clustered.structure.label, previous=best, value=value,
        ))
        if value <= best:
            logger.info("Epoch %d: clustering into %s does not raise the catch (%.2f <= %.2f)",
                        structure.epoch, clustered.structure.label, value, best)
            break
        current, base, best = clustered.structure, candidate, value
        virtual = clustered.virtual
        outcome.objectives.append(best)

    if cfg.gamma_tradeoff < 1 and any(len(b) > 1 for b in current.blocks):
        split = split_pass(current, state, params, cfg, mode, solver=solver, log=engine.log)
        if split.key != current.key:
            current = split
            base = solver.solve(current)

    outcome.structure = current
    outcome.solution = base
    logger.info("Epoch %d heuristic structure: %s", structure.epoch, structure_label(current.blocks))
    return outcome
