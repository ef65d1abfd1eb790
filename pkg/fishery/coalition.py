"""
Coalition structures and the merge/split negotiation protocol.

A structure is a partition of the boats. Every multi-boat block carries a
binary merge tree whose nodes store the attribution ratios agreed when the
two sides merged; catch is shared out by walking down that tree.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from .decision import DecisionEngine, DecisionLog, ProtocolMode, evaluate_merge, evaluate_split, merge_ratios
from .errors import SolverError, ValidationError
from .model import EffortSchedule, ModelParams, StockState
from .mpc import Anchor, CommMode, MpcConfig, StructureSolution, solve_structure
from .utils import Block, Budget, block_label, check_budget, structure_label

logger = logging.getLogger(__name__)

__all__ = [
    "MergeNode", "MergeLedger", "CoalitionStructure", "ProtocolMode", "EpochSolver",
    "enumerate_partitions", "subset_count", "evaluate_merge", "evaluate_split",
    "redistribute", "merge_pass", "split_pass",
]

RATIO_TOL = 1e-12


@dataclass(frozen=True)
class MergeNode:
    """Two sub-coalitions merged with attribution ratios (r_left, r_right)"""

    left: "Node"
    right: "Node"
    r_left: float
    r_right: float

    def __post_init__(self):
        if abs(self.r_left + self.r_right - 1.0) > RATIO_TOL:
            raise ValidationError(f"merge ratios must sum to 1, got {self.r_left} + {self.r_right}")
        if self.r_left < 0 or self.r_right < 0:
            raise ValidationError("merge ratios must be non-negative")


Node = Union[int, MergeNode]


def leaves(node: Node) -> Block:
    if isinstance(node, MergeNode):
        return tuple(sorted(leaves(node.left) + leaves(node.right)))
    return (node,)


def _restrict(node: Node, keep: frozenset) -> Optional[Node]:
    """The merge tree limited to the boats in `keep`; ratios of surviving nodes are kept"""
    if not isinstance(node, MergeNode):
        return node if node in keep else None
    left = _restrict(node.left, keep)
    right = _restrict(node.right, keep)
    if left is not None and right is not None:
        return MergeNode(left, right, node.r_left, node.r_right)
    return left if left is not None else right


@dataclass(frozen=True)
class MergeLedger:
    """Merge tree per multi-boat block"""

    trees: Mapping[Block, MergeNode] = field(default_factory=dict)

    def tree(self, block: Block) -> Optional[Node]:
        if len(block) == 1:
            return block[0]
        return self.trees.get(tuple(block))

    def merged(self, a: Block, b: Block, r_a: float) -> "MergeLedger":
        left = self.tree(a) if self.tree(a) is not None else _flat_tree(a)
        right = self.tree(b) if self.tree(b) is not None else _flat_tree(b)
        trees = {k: v for k, v in self.trees.items() if k not in (a, b)}
        trees[tuple(sorted(a + b))] = MergeNode(left, right, r_a, 1.0 - r_a)
        return MergeLedger(trees)

    def split(self, block: Block, part_m: Block, part_n: Block) -> "MergeLedger":
        trees = {k: v for k, v in self.trees.items() if k != block}
        tree = self.trees.get(block)
        for part in (part_m, part_n):
            if len(part) > 1:
                sub = _restrict(tree, frozenset(part)) if tree is not None else _flat_tree(part)
                trees[part] = sub
        return MergeLedger(trees)

    def restricted_to(self, blocks: Sequence[Block]) -> "MergeLedger":
        return MergeLedger({b: t for b, t in self.trees.items() if b in blocks})


def _flat_tree(block: Block) -> Node:
    """Left-deep tree with head-count ratios, for blocks formed without a recorded history"""
    node: Node = block[0]
    for count, boat in enumerate(block[1:], start=1):
        node = MergeNode(node, boat, count / (count + 1), 1.0 / (count + 1))
    return node


@dataclass(frozen=True)
class CoalitionStructure:
    """Partition of the boats {0..K-1} into coalitions"""

    blocks: Tuple[Block, ...]
    n_boats: int
    max_block_size: int = field(default_factory=lambda: settings.MAX_BLOCK_SIZE)
    epoch: int = 0
    ledger: MergeLedger = field(default_factory=MergeLedger)

    def __post_init__(self):
        blocks = tuple(sorted((tuple(sorted(int(b) for b in block)) for block in self.blocks),
                              key=lambda blk: blk[0] if blk else -1))
        if any(len(block) == 0 for block in blocks):
            raise ValidationError("coalitions must be non-empty")
        members = [b for block in blocks for b in block]
        if len(members) != len(set(members)):
            raise ValidationError("coalitions overlap")
        if sorted(members) != list(range(self.n_boats)):
            raise ValidationError(f"coalitions must cover boats 0..{self.n_boats - 1}")
        if self.max_block_size < 1:
            raise ValidationError("max_block_size must be positive")
        oversized = [b for b in blocks if len(b) > self.max_block_size]
        if oversized:
            raise ValidationError(
                f"{block_label(oversized[0])} exceeds the cap of {self.max_block_size} boats"
            )
        for block, tree in self.ledger.trees.items():
            if block in blocks and leaves(tree) != block:
                raise ValidationError(f"ledger tree does not match {block_label(block)}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "ledger", self.ledger.restricted_to(blocks))

    @classmethod
    def singletons(cls, n_boats: int, max_block_size: Optional[int] = None) -> "CoalitionStructure":
        cap = settings.MAX_BLOCK_SIZE if max_block_size is None else max_block_size
        return cls(blocks=tuple((k,) for k in range(n_boats)), n_boats=n_boats, max_block_size=cap)

    @classmethod
    def grand(cls, n_boats: int) -> "CoalitionStructure":
        """All boats in one coalition; the cap is lifted to K"""
        block = tuple(range(n_boats))
        return cls(blocks=(block,), n_boats=n_boats, max_block_size=n_boats,
                   ledger=MergeLedger({block: _flat_tree(block)} if n_boats > 1 else {}))

    @property
    def label(self) -> str:
        return structure_label(self.blocks)

    @property
    def key(self) -> Tuple[Block, ...]:
        return self.blocks

    def block_of(self, boat: int) -> Block:
        for block in self.blocks:
            if boat in block:
                return block
        raise ValidationError(f"boat {boat} is not in the structure")

    def with_epoch(self, epoch: int) -> "CoalitionStructure":
        return CoalitionStructure(self.blocks, self.n_boats, self.max_block_size, epoch, self.ledger)

    def merge(self, a: Block, b: Block, r_a: Optional[float] = None) -> "CoalitionStructure":
        if a not in self.blocks or b not in self.blocks or a == b:
            raise ValidationError(f"cannot merge {block_label(a)} and {block_label(b)}")
        if r_a is None:
            r_a = len(a) / (len(a) + len(b))
        merged = tuple(sorted(a + b))
        blocks = tuple(blk for blk in self.blocks if blk not in (a, b)) + (merged,)
        return CoalitionStructure(blocks, self.n_boats, self.max_block_size, self.epoch,
                                  self.ledger.merged(a, b, r_a))

    def split(self, block: Block, part: Block) -> "CoalitionStructure":
        part = tuple(sorted(part))
        if block not in self.blocks or not set(part) < set(block):
            raise ValidationError(f"{block_label(part)} is not a proper part of {block_label(block)}")
        rest = tuple(b for b in block if b not in part)
        blocks = tuple(blk for blk in self.blocks if blk != block) + (part, rest)
        return CoalitionStructure(blocks, self.n_boats, self.max_block_size, self.epoch,
                                  self.ledger.split(block, part, rest))


def enumerate_partitions(n_boats: int, max_block: Optional[int] = None) -> Iterator[CoalitionStructure]:
    """
    Every partition of {0..K-1} with blocks of at most `max_block` boats,
    each exactly once, blocks ordered by their smallest member.
    """
    if n_boats < 1:
        raise ValidationError(f"need at least one boat, got {n_boats}")
    cap = n_boats if max_block is None else max_block

    def extend(boat: int, blocks: List[List[int]]) -> Iterator[List[List[int]]]:
        if boat == n_boats:
            yield blocks
            return
        for block in blocks:
            if len(block) < cap:
                block.append(boat)
                yield from extend(boat + 1, blocks)
                block.pop()
        blocks.append([boat])
        yield from extend(boat + 1, blocks)
        blocks.pop()

    for blocks in extend(0, []):
        yield CoalitionStructure(tuple(tuple(b) for b in blocks), n_boats, max_block_size=cap)


def subset_count(n_boats: int, min_size: int = 2) -> int:
    """Number of coalitions with at least `min_size` boats (2^K - K - 1 for pairs and up)"""
    return sum(math.comb(n_boats, size) for size in range(min_size, n_boats + 1))


def candidate_coalitions(n_boats: int, min_size: int = 2) -> Iterator[Block]:
    for size in range(min_size, n_boats + 1):
        yield from combinations(range(n_boats), size)


def redistribute(total_catch: float, ledger: MergeLedger, block: Block) -> np.ndarray:
    """
    Share a coalition's catch among its boats by walking down its merge tree.
    Returns one amount per boat of `block`, in block order.
    """
    block = tuple(sorted(block))
    if len(block) == 1:
        return np.array([float(total_catch)])
    tree = ledger.tree(block)
    if tree is None or leaves(tree) != block:
        raise ValidationError(f"ledger has no merge tree for {block_label(block)}")

    shares: Dict[int, float] = {}

    def walk(node: Node, amount: float) -> None:
        if not isinstance(node, MergeNode):
            shares[node] = amount
            return
        left = amount * node.r_left
        walk(node.left, left)
        walk(node.right, amount - left)

    walk(tree, float(total_catch))
    return np.array([shares[b] for b in block])


class EpochSolver:
    """
    Solves candidate structures for one decision epoch under identical
    external conditions, solving each distinct structure once.
    """

    def __init__(self, state: StockState, params: ModelParams, cfg: MpcConfig,
                 anchor: Optional[Anchor] = None, warm_start: Optional[EffortSchedule] = None,
                 budget: Optional[Budget] = None):
        self.state = state
        self.params = params
        self.cfg = cfg
        self.anchor = anchor
        self.warm_start = warm_start
        self.budget = budget
        self._cache: Dict[Tuple[Block, ...], StructureSolution] = {}

    def solve(self, structure: CoalitionStructure) -> StructureSolution:
        if structure.key not in self._cache:
            check_budget(self.budget)
            self._cache[structure.key] = solve_structure(
                structure, self.state, self.params, self.cfg, CommMode.CROSS,
                warm_start=self.warm_start, anchor=self.anchor,
            )
        return self._cache[structure.key]

    @property
    def solved(self) -> int:
        return len(self._cache)


def _engine(mode: ProtocolMode, log: Optional[DecisionLog]) -> DecisionEngine:
    return DecisionEngine(mode, log)


def merge_pass(structure: CoalitionStructure, state: StockState, params: ModelParams,
               cfg: MpcConfig, mode: ProtocolMode, *, solver: Optional[EpochSolver] = None,
               log: Optional[DecisionLog] = None, day: Optional[int] = None) -> CoalitionStructure:
    """
    Greedy merge sweep over pairs of the incoming blocks in canonical order.
    An accepted merge becomes the incumbent for the remaining pairs.
    """
    if len(structure.blocks) <= 1:
        return structure
    solver = solver or EpochSolver(state, params, cfg)
    engine = _engine(mode, log)
    day = state.day if day is None else day
    gamma = params.catchability

    temp = structure
    original = structure.blocks
    for i in range(len(original) - 1):
        for j in range(i + 1, len(original)):
            a = temp.block_of(original[i][0])
            b = temp.block_of(original[j][0])
            if a == b:
                continue
            if len(a) + len(b) > temp.max_block_size:
                logger.debug("Skipping %s + %s: exceeds cap of %d",
                             block_label(a), block_label(b), temp.max_block_size)
                continue
            candidate = temp.merge(a, b)
            merged_block = tuple(sorted(a + b))
            try:
                base = solver.solve(temp)
                merged = solver.solve(candidate)
            except SolverError as exc:
                engine.failure(kind="merge", epoch=structure.epoch, day=day, structure=temp.label,
                               part_m=a, part_n=b, reason=str(exc))
                continue
            obj_m, obj_n = base.objectives[a], base.objectives[b]
            merged_sol = merged[merged_block]
            shares = (merged_sol.catch_of(a, gamma), merged_sol.catch_of(b, gamma))
            record = engine.merge_decision(
                epoch=structure.epoch, day=day, structure=temp.label, part_m=a, part_n=b,
                merged_obj=merged_sol.objective, obj_m=obj_m, obj_n=obj_n, shares=shares,
            )
            if record.accepted:
                r_a, _ = merge_ratios(obj_m, obj_n, len(a), len(b))
                temp = temp.merge(a, b, r_a)
    return temp


def _split_candidates(structure: CoalitionStructure, block: Block) -> List[Tuple[str, Block, Block]]:
    candidates: List[Tuple[str, Block, Block]] = []
    seen = set()
    tree = structure.ledger.tree(block)
    if isinstance(tree, MergeNode):
        part_m, part_n = leaves(tree.left), leaves(tree.right)
        candidates.append(("undo last merge", part_m, part_n))
        seen.add(frozenset((part_m, part_n)))
    for boat in block:
        part_m, part_n = (boat,), tuple(b for b in block if b != boat)
        if frozenset((part_m, part_n)) in seen:
            continue
        seen.add(frozenset((part_m, part_n)))
        candidates.append(("single boat leaves", part_m, part_n))
    return candidates


def split_pass(structure: CoalitionStructure, state: StockState, params: ModelParams,
               cfg: MpcConfig, mode: ProtocolMode, *, solver: Optional[EpochSolver] = None,
               log: Optional[DecisionLog] = None, day: Optional[int] = None) -> CoalitionStructure:
    """
    For every multi-boat block, test undoing its last recorded merge and then
    each single boat leaving; the first candidate meeting the split
    condition is applied and the sweep moves on to the next block.
    """
    solver = solver or EpochSolver(state, params, cfg)
    engine = _engine(mode, log)
    day = state.day if day is None else day
    gamma = params.catchability

    temp = structure
    for block in structure.blocks:
        if len(block) < 2:
            continue
        for note, part_m, part_n in _split_candidates(temp, block):
            candidate = temp.split(block, part_m)
            try:
                base = solver.solve(temp)
                split = solver.solve(candidate)
            except SolverError as exc:
                engine.failure(kind="split", epoch=structure.epoch, day=day, structure=temp.label,
                               part_m=part_m, part_n=part_n, reason=str(exc))
                continue
            merged_sol = base[block]
            shares = (merged_sol.catch_of(part_m, gamma), merged_sol.catch_of(part_n, gamma))
            record = engine.split_decision(
                epoch=structure.epoch, day=day, structure=temp.label, part_m=part_m, part_n=part_n,
                merged_obj=merged_sol.objective, obj_m=split.objectives[part_m],
                obj_n=split.objectives[part_n], shares=shares, note=note,
            )
            if record.accepted:
                temp = candidate
                break
    return temp
