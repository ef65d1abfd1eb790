import numpy as np
import pytest

from fishery.coalition import CoalitionStructure
from fishery.decision import DecisionLog
from fishery.errors import ValidationError
from fishery import heuristic
from fishery.heuristic import (
    HeuristicConfig,
    VirtualEfforts,
    cluster_by_distance,
    run_heuristic_epoch,
    solve_penalized,
    update_virtual,
)
from fishery.model import StockState
from fishery.mpc import BandPolicy, solve_structure


@pytest.fixture
def hcfg(fast_cfg):
    return HeuristicConfig(**fast_cfg.model_dump())


def _three_vectors():
    # squared distances: 0.01 between boats 1 and 2, 0.25 to boat 3
    return VirtualEfforts(np.array([
        [0.0, 0.0],
        [0.1, 0.0],
        [0.05, np.sqrt(0.25 - 0.05 ** 2)],
    ]))


def test_virtual_vectors_need_a_matrix():
    with pytest.raises(ValidationError):
        VirtualEfforts(np.array([1.0, 0.0]))


def test_classes_become_a_structure():
    virtual = VirtualEfforts(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    assert virtual.classes() == [(0, 2), (1,)]
    assert virtual.to_structure().blocks == ((0, 2), (1,))


def test_update_without_neighbours_returns_efforts():
    efforts = np.array([[0.3, 0.7], [0.3, 0.7]])
    cfg = HeuristicConfig(mu=0.5, gamma_tradeoff=2.0)
    updated = update_virtual(efforts, VirtualEfforts.from_efforts(efforts), cfg)
    assert updated.vectors == pytest.approx(efforts)


def test_update_solves_the_coupled_system():
    efforts = np.array([[1.0, 0.0], [0.0, 1.0]])
    cfg = HeuristicConfig(mu=1.0, gamma_tradeoff=1.0)
    updated = update_virtual(efforts, VirtualEfforts.from_efforts(efforts), cfg)
    # (mu + gamma) v1 - gamma v2 = mu e1 and symmetric
    assert updated.vectors == pytest.approx(np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]]), abs=1e-9)


def test_update_with_dominant_mu_keeps_efforts():
    rng = np.random.default_rng(11)
    efforts = rng.dirichlet(np.ones(4), size=5)
    cfg = HeuristicConfig(mu=1e9, gamma_tradeoff=1.0)
    updated = update_virtual(efforts, VirtualEfforts.from_efforts(efforts), cfg)
    assert np.abs(updated.vectors - efforts).max() < 1e-6


def test_update_shape_mismatch():
    with pytest.raises(ValidationError):
        update_virtual(np.ones((2, 2)), VirtualEfforts(np.ones((3, 2))), HeuristicConfig())


def test_zero_threshold_keeps_distinct_vectors():
    result = cluster_by_distance(_three_vectors(), 0.0, CoalitionStructure.singletons(3))
    assert result.structure.blocks == ((0,), (1,), (2,))


def test_identical_vectors_merge():
    virtual = VirtualEfforts(np.array([[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]]))
    result = cluster_by_distance(virtual, 1e-12, CoalitionStructure.singletons(3))
    assert result.structure.blocks == ((0, 1), (2,))


def test_only_the_close_pair_merges():
    result = cluster_by_distance(_three_vectors(), 0.04, CoalitionStructure.singletons(3))
    assert result.structure.blocks == ((0, 1), (2,))
    assert result.evaluations == 3
    # merged boats share the mean vector
    assert result.virtual.vectors[0] == pytest.approx([0.05, 0.0])
    assert np.array_equal(result.virtual.vectors[0], result.virtual.vectors[1])


def test_distance_evaluations_are_quadratic():
    rng = np.random.default_rng(5)
    virtual = VirtualEfforts(rng.dirichlet(np.ones(4), size=6))
    result = cluster_by_distance(virtual, 0.0, CoalitionStructure.singletons(6))
    assert result.evaluations == 15


def test_clustering_respects_the_cap():
    virtual = VirtualEfforts(np.full((4, 2), 0.5))
    result = cluster_by_distance(virtual, 1.0, CoalitionStructure.singletons(4, max_block_size=2))
    assert result.structure.blocks == ((0, 1), (2, 3))


def test_cluster_ratios_follow_objectives():
    virtual = VirtualEfforts(np.array([[0.5, 0.5], [0.5, 0.5]]))
    result = cluster_by_distance(virtual, 1.0, CoalitionStructure.singletons(2),
                                 objectives={(0,): 1.0, (1,): 3.0})
    assert result.structure.ledger.tree((0, 1)).r_left == pytest.approx(0.25)


def test_zero_mu_matches_plain_solve(small_params, start, hcfg):
    structure = CoalitionStructure(((0, 1), (2,)), 3)
    virtual = VirtualEfforts(np.array([[0.9, 0.1], [0.9, 0.1], [0.2, 0.8]]))
    penalized = solve_penalized(virtual, start, small_params, hcfg, structure=structure, mu=0.0)
    plain = solve_structure(structure, start, small_params, hcfg)
    assert abs(penalized.total_objective - plain.total_objective) <= 1e-6
    assert np.array_equal(penalized.schedule.effort, plain.schedule.effort)


def test_large_mu_pulls_efforts_onto_virtual_vectors(small_params, start):
    cfg = HeuristicConfig(horizon=3, band_policy=BandPolicy.OFF, mu=1e6)
    targets = np.array([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
    sol = solve_penalized(VirtualEfforts(targets), start, small_params, cfg,
                          structure=CoalitionStructure.singletons(3))
    gaps = np.linalg.norm(sol.schedule.first_step() - targets, axis=1)
    assert gaps.max() < 1e-3


def test_default_mu_barely_moves_the_objective(default_params):
    cfg = HeuristicConfig(horizon=10, band_policy=BandPolicy.OFF)
    state = StockState.initial(default_params)
    structure = CoalitionStructure.singletons(6)
    plain = solve_structure(structure, state, default_params, cfg)
    virtual = VirtualEfforts.from_efforts(plain.schedule.first_step())
    penalized = solve_penalized(virtual, state, default_params, cfg, structure=structure)
    assert penalized.total_objective == pytest.approx(plain.total_objective, rel=1e-2)


def test_fixed_point_stops_after_one_iteration(small_params, start, fast_cfg):
    cfg = HeuristicConfig(**fast_cfg.model_dump(), merge_threshold=0.0)
    structure = CoalitionStructure(((0, 1), (2,)), 3)
    outcome = run_heuristic_epoch(structure, start, small_params, cfg)
    assert outcome.structure.key == structure.key
    assert outcome.iterations == 1
    assert len(outcome.objectives) == 1


def test_accepted_iterations_raise_the_catch(pooled_params, fast_cfg):
    cfg = HeuristicConfig(**fast_cfg.model_dump(), merge_threshold=1e-2)
    log = DecisionLog()
    outcome = run_heuristic_epoch(CoalitionStructure.singletons(3), StockState.initial(pooled_params),
                                  pooled_params, cfg, log=log)

    # all three boats start on the same region, so boats 1 and 2 cluster
    assert len(outcome.objectives) > 1
    assert outcome.objectives[:2] == pytest.approx([1312.5, 1470.0], rel=1e-3)
    assert outcome.structure.key != CoalitionStructure.singletons(3).key
    assert all(b > a for a, b in zip(outcome.objectives, outcome.objectives[1:]))
    assert outcome.distance_evaluations >= 3
    assert all(r.kind == "cluster" for r in log.records)
    assert all(len(b) <= 3 for b in outcome.structure.blocks)


def test_low_gamma_considers_splitting(small_params, start, fast_cfg):
    cfg = HeuristicConfig(**fast_cfg.model_dump(), merge_threshold=0.0, gamma_tradeoff=0.5)
    log = DecisionLog()
    structure = CoalitionStructure.singletons(3).merge((0,), (1,))
    run_heuristic_epoch(structure, start, small_params, cfg, log=log)
    assert any(r.kind == "split" for r in log.records)


def test_virtual_vectors_carry_across_iterations(pooled_params, fast_cfg, monkeypatch):
    seen = []
    original = heuristic.update_virtual

    def recording(efforts, virtual, cfg):
        seen.append((np.array(efforts), np.array(virtual.vectors)))
        return original(efforts, virtual, cfg)

    monkeypatch.setattr(heuristic, "update_virtual", recording)
    cfg = HeuristicConfig(**fast_cfg.model_dump(), merge_threshold=1e-2)
    run_heuristic_epoch(CoalitionStructure.singletons(3), StockState.initial(pooled_params),
                        pooled_params, cfg)

    assert len(seen) >= 2
    efforts, virtual = seen[0]
    assert np.array_equal(virtual, efforts)
    # second round starts from the clustered vectors, not from the new efforts
    efforts, virtual = seen[1]
    assert np.array_equal(virtual[0], virtual[1])
    assert not np.allclose(virtual, efforts)
