import numpy as np
import pytest

from fishery.coalition import (
    CoalitionStructure,
    EpochSolver,
    MergeLedger,
    MergeNode,
    ProtocolMode,
    candidate_coalitions,
    enumerate_partitions,
    evaluate_merge,
    evaluate_split,
    merge_pass,
    redistribute,
    split_pass,
    subset_count,
)
from fishery.decision import DecisionLog, merge_ratios
from fishery.errors import SolverError, ValidationError
from fishery.model import StockState
from fishery.mpc import solve_structure

WITH = ProtocolMode.WITH_REDISTRIBUTION
WITHOUT = ProtocolMode.WITHOUT_REDISTRIBUTION


class _StubBlock:
    def __init__(self, block, per_boat):
        self.per_boat = per_boat
        self.objective = float(per_boat[list(block)].sum())

    def catch_of(self, boats, catchability):
        return float(self.per_boat[list(boats)].sum())


class _StubSolution:
    def __init__(self, structure, per_boat):
        self.per_boat = np.asarray(per_boat, dtype=float)
        self.objectives = {b: float(self.per_boat[list(b)].sum()) for b in structure.blocks}

    def __getitem__(self, block):
        return _StubBlock(block, self.per_boat)


class _StubSolver:
    """Predicted per-boat catch for every structure the protocol asks about"""

    def __init__(self, catches, failing=()):
        self.catches = catches
        self.failing = set(failing)

    def solve(self, structure):
        if structure.key in self.failing:
            raise SolverError("diverged", structure.blocks[0])
        return _StubSolution(structure, self.catches[structure.key])


SINGLES = ((0,), (1,), (2,))
PAIR_01 = ((0, 1), (2,))
PAIR_02 = ((0, 2), (1,))
PAIR_12 = ((0,), (1, 2))
GRAND = ((0, 1, 2),)


def test_partition_counts():
    assert len(list(enumerate_partitions(3, 3))) == 5
    assert [s.blocks for s in enumerate_partitions(1)] == [((0,),)]
    assert len(list(enumerate_partitions(4, 2))) == 10


def test_partitions_are_distinct_and_canonical():
    keys = [s.key for s in enumerate_partitions(4)]
    assert len(keys) == len(set(keys)) == 15
    for key in keys:
        assert list(key) == sorted(key, key=lambda b: b[0])


def test_subset_count():
    assert subset_count(6) == 57
    assert len(list(candidate_coalitions(6))) == 57


def test_structure_is_canonical():
    structure = CoalitionStructure(((2,), (1, 0)), 3)
    assert structure.blocks == ((0, 1), (2,))
    assert structure.label == "{1,2} {3}"
    assert structure.block_of(1) == (0, 1)


@pytest.mark.parametrize("blocks", [((0, 1), (1, 2)), ((0,), (1,)), ((0, 1, 2, 3),)])
def test_invalid_structures(blocks):
    with pytest.raises(ValidationError):
        CoalitionStructure(blocks, 4 if len(blocks) == 1 else 3, max_block_size=3)


def test_grand_structure_lifts_the_cap():
    grand = CoalitionStructure.grand(6)
    assert grand.blocks == ((0, 1, 2, 3, 4, 5),)
    assert grand.max_block_size == 6


@pytest.mark.parametrize("mode, merged, obj_m, obj_n, shares, expected", [
    (WITH, 10.0, 4.0, 5.0, None, True),
    (WITH, 8.9, 4.0, 5.0, None, False),
    (WITHOUT, 9.0, 4.0, 5.0, (4.2, 4.8), False),
    (WITHOUT, 9.5, 4.0, 5.0, (4.2, 5.3), True),
])
def test_merge_and_split_conditions(mode, merged, obj_m, obj_n, shares, expected):
    assert evaluate_merge(mode, merged, obj_m, obj_n, shares) is expected
    assert evaluate_split(mode, merged, obj_m, obj_n, shares) is not expected


def test_without_redistribution_needs_shares():
    with pytest.raises(ValidationError):
        evaluate_merge(WITHOUT, 10.0, 4.0, 5.0)


def test_merge_ratios_fall_back_to_head_count():
    assert merge_ratios(4.0, 5.0) == pytest.approx((4 / 9, 5 / 9))
    assert merge_ratios(0.0, 0.0, 2, 1) == pytest.approx((2 / 3, 1 / 3))


def test_merge_node_ratios_must_sum_to_one():
    with pytest.raises(ValidationError):
        MergeNode(0, 1, 0.5, 0.6)


def test_redistribute_single_node():
    ledger = MergeLedger({(0, 1): MergeNode(0, 1, 4 / 9, 5 / 9)})
    shares = redistribute(10.0, ledger, (0, 1))
    assert shares == pytest.approx([40 / 9, 50 / 9])


def test_redistribute_singleton_is_identity():
    assert redistribute(7.5, MergeLedger(), (3,)).tolist() == [7.5]


def test_redistribute_nested_tree():
    structure = CoalitionStructure.singletons(3).merge((0,), (1,), 0.5).merge((0, 1), (2,), 0.6)
    assert redistribute(100.0, structure.ledger, (0, 1, 2)) == pytest.approx([30.0, 30.0, 40.0])


def test_redistribute_without_tree():
    with pytest.raises(ValidationError):
        redistribute(10.0, MergeLedger(), (0, 1))


@pytest.mark.parametrize("seed", range(5))
def test_redistribution_conserves_catch(seed):
    rng = np.random.default_rng(seed)
    structure = CoalitionStructure.singletons(4, max_block_size=4)
    structure = structure.merge((0,), (2,), rng.uniform())
    structure = structure.merge((1,), (3,), rng.uniform())
    structure = structure.merge((0, 2), (1, 3), rng.uniform())
    total = rng.uniform(0, 1000)
    assert redistribute(total, structure.ledger, (0, 1, 2, 3)).sum() == pytest.approx(total, abs=1e-9)


def test_split_truncates_the_ledger():
    structure = CoalitionStructure.singletons(3).merge((0,), (1,), 0.25).merge((0, 1), (2,), 0.6)
    split = structure.split((0, 1, 2), (2,))
    assert split.blocks == ((0, 1), (2,))
    assert redistribute(8.0, split.ledger, (0, 1)) == pytest.approx([2.0, 6.0])

    leaving = structure.split((0, 1, 2), (1,))
    assert leaving.blocks == ((0, 2), (1,))
    # boat 0 and boat 2 keep the ratios of the merges they survived
    assert redistribute(10.0, leaving.ledger, (0, 2)) == pytest.approx([6.0, 4.0])


def test_merge_pass_accepts_profitable_pair(small_params, start, fast_cfg):
    solver = _StubSolver({SINGLES: [4, 5, 3], PAIR_01: [5, 5, 3], GRAND: [3, 3, 3]})
    log = DecisionLog()
    result = merge_pass(CoalitionStructure.singletons(3), start, small_params, fast_cfg, WITH,
                        solver=solver, log=log)

    assert result.blocks == PAIR_01
    assert result.ledger.tree((0, 1)).r_left == pytest.approx(4 / 9)
    assert len(log) == 3
    assert [r.accepted for r in log.records] == [True, False, False]
    assert all(r.margin >= 0 for r in log.accepted())


def test_merge_pass_without_redistribution_checks_each_side(small_params, start, fast_cfg):
    catches = {SINGLES: [4, 5, 3], PAIR_01: [4.3, 4.8, 3], PAIR_02: [3.5, 5, 2], PAIR_12: [4, 4, 3.5]}
    without = merge_pass(CoalitionStructure.singletons(3), start, small_params, fast_cfg, WITHOUT,
                         solver=_StubSolver(catches))
    assert without.blocks == SINGLES

    with_redistribution = merge_pass(CoalitionStructure.singletons(3), start, small_params, fast_cfg,
                                     WITH, solver=_StubSolver({**catches, GRAND: [3, 3, 3]}))
    assert with_redistribution.blocks == PAIR_01


def test_merge_pass_respects_the_cap(small_params, start, fast_cfg):
    log = DecisionLog()
    solver = _StubSolver({SINGLES: [4, 5, 3], PAIR_01: [5, 5, 3]})
    result = merge_pass(CoalitionStructure.singletons(3, max_block_size=2), start, small_params,
                        fast_cfg, WITH, solver=solver, log=log)
    assert result.blocks == PAIR_01
    assert len(log) == 1


def test_merge_pass_rejects_failed_candidates(small_params, start, fast_cfg):
    log = DecisionLog()
    solver = _StubSolver({SINGLES: [4, 5, 3], PAIR_02: [3, 5, 2], PAIR_12: [4, 1, 1]},
                         failing={PAIR_01})
    result = merge_pass(CoalitionStructure.singletons(3), start, small_params, fast_cfg, WITH,
                        solver=solver, log=log)
    assert result.blocks == SINGLES
    assert log.records[0].note.startswith("solver failure")
    assert not any(r.accepted for r in log.records)


def test_merge_pass_leaves_single_block_alone(small_params, start, fast_cfg):
    grand = CoalitionStructure.grand(3)
    assert merge_pass(grand, start, small_params, fast_cfg, WITH, solver=_StubSolver({})) is grand


def test_split_pass_undoes_unprofitable_merge(small_params, start, fast_cfg):
    merged = CoalitionStructure.singletons(3).merge((0,), (1,), 4 / 9)
    catches = {PAIR_01: [4.3, 4.8, 3], SINGLES: [4, 5, 3]}

    kept = split_pass(merged, start, small_params, fast_cfg, WITH, solver=_StubSolver(catches))
    assert kept.blocks == PAIR_01

    log = DecisionLog()
    split = split_pass(merged, start, small_params, fast_cfg, WITHOUT,
                       solver=_StubSolver(catches), log=log)
    assert split.blocks == SINGLES
    assert log.records[0].note == "undo last merge"
    assert log.records[0].accepted


def test_split_candidates_undo_last_merge_first(small_params, start, fast_cfg):
    grand = CoalitionStructure.singletons(3).merge((0,), (1,)).merge((0, 1), (2,))
    solver = _StubSolver({GRAND: [4, 4, 4], PAIR_01: [3, 3, 3], PAIR_12: [3, 3, 3], PAIR_02: [3, 3, 3]})
    log = DecisionLog()
    result = split_pass(grand, start, small_params, fast_cfg, WITH, solver=solver, log=log)

    assert result.blocks == GRAND
    assert [r.part_m for r in log.records] == ["{1,2}", "{1}", "{2}"]
    assert [r.note for r in log.records] == ["undo last merge", "single boat leaves", "single boat leaves"]

    # nothing changed, so another round changes nothing either
    again = merge_pass(result, start, small_params, fast_cfg, WITH, solver=solver)
    assert split_pass(again, start, small_params, fast_cfg, WITH, solver=solver).key == result.key


def test_split_pass_on_singletons_is_a_no_op(small_params, start, fast_cfg):
    singles = CoalitionStructure.singletons(3)
    assert split_pass(singles, start, small_params, fast_cfg, WITH, solver=_StubSolver({})).key == SINGLES


def test_protocol_reaches_the_best_partition(pooled_params, fast_cfg):
    start = StockState.initial(pooled_params)
    values = {s.key: solve_structure(s, start, pooled_params, fast_cfg).total_objective
              for s in enumerate_partitions(3)}
    assert sorted(values.values()) == pytest.approx([1312.5, 1470.0, 1487.5, 1505.0, 1575.0], rel=1e-3)
    best_key = max(values, key=values.get)

    solver = EpochSolver(start, pooled_params, fast_cfg)
    log = DecisionLog()
    merged = merge_pass(CoalitionStructure.singletons(3), start, pooled_params, fast_cfg, WITH,
                        solver=solver, log=log)
    final = split_pass(merged, start, pooled_params, fast_cfg, WITH, solver=solver, log=log)

    assert final.key == best_key
    assert solver.solve(final).total_objective >= values[best_key] - 0.05
    assert all(r.margin >= 0 for r in log.accepted() if r.kind == "merge")
    # every structure is solved at most once per epoch
    assert solver.solved <= 5


def test_protocol_stays_inside_the_partitions(small_params, start, fast_cfg):
    solver = EpochSolver(start, small_params, fast_cfg)
    merged = merge_pass(CoalitionStructure.singletons(3), start, small_params, fast_cfg, WITH,
                        solver=solver)
    final = split_pass(merged, start, small_params, fast_cfg, WITH, solver=solver)

    assert final.key in {s.key for s in enumerate_partitions(3)}
    assert all(len(b) <= final.max_block_size for b in final.blocks)
