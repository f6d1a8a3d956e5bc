import numpy as np
import pytest

from branchalloc.errors import Refused
from branchalloc.graph import check_balance, is_compatible, m_alpha_cost, plan_from_map
from branchalloc.measures import AtomicMeasure, Instance, normalize
from branchalloc.solver import (
    GroupSolveCache,
    brute_force_oracle,
    evaluate_map,
    solve,
    verify_simplex_equality,
)

from conftest import random_instance


def component_factory_counts(result, instance):
    """Positive-load factories per connected component of the path."""
    counts = []
    used = {i for i, load in enumerate(result.loads) if load > 1e-12}
    for comp in result.path.connected_components():
        owners = {
            i
            for i in used
            if any(
                np.linalg.norm(result.path.vertices[v] - instance.factories[i]) <= 1e-9
                for v in comp
            )
        }
        counts.append(len(owners))
    return counts


class TestEvaluateMap:
    def test_single_factory_single_solve(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0]],
                households=[[-1.0, 2.0], [1.0, 2.0]],
                demands=[0.5, 0.5],
            )
        )
        cost, path = evaluate_map((0, 0), inst)
        assert cost == pytest.approx(3.0, abs=1e-9)

    def test_colocated_households_cost_zero(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0], [5.0, 0.0]],
                households=[[0.0, 0.0], [5.0, 0.0]],
                demands=[0.5, 0.5],
            )
        )
        cost, path = evaluate_map((0, 1), inst)
        assert cost == 0.0

    def test_rectangle_identity_pairing(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0], [4.0, 0.0]],
                households=[[0.0, 1.5], [4.0, 1.5]],
                demands=[0.25, 0.75],
            )
        )
        cost, _ = evaluate_map((0, 1), inst)
        assert cost == pytest.approx(0.25**0.5 * 1.5 + 0.75**0.5 * 1.5, abs=1e-9)

    def test_empty_factory_contributes_nothing(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0], [100.0, 0.0]],
                households=[[0.0, 1.0]],
                demands=[1.0],
            )
        )
        cost, path = evaluate_map((0,), inst)
        assert cost == pytest.approx(1.0, abs=1e-12)
        assert path.num_vertices == 2  # the unused factory never appears


class TestSolve:
    def test_single_factory(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0]],
                households=[[-1.0, 2.0], [1.0, 2.0]],
                demands=[0.5, 0.5],
            )
        )
        result = solve(inst)
        assert result.assignment == (0, 0)
        assert result.cost == pytest.approx(3.0, abs=1e-9)
        assert result.mode == "exact"

    def test_two_clusters_block_diagonal(self, rng):
        lows = np.hstack([rng.uniform(-0.4, 0.4, (3, 1)), rng.uniform(-0.05, 0.05, (3, 1))])
        highs = np.hstack([rng.uniform(9.6, 10.4, (3, 1)), rng.uniform(-0.05, 0.05, (3, 1))])
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0], [10.0, 0.0]],
                households=np.vstack([lows, highs]),
                demands=np.full(6, 1.0),
            )
        )
        result = solve(inst)
        assert result.assignment == (0, 0, 0, 1, 1, 1)
        oracle = brute_force_oracle(inst)
        assert result.assignment in oracle.optimal_maps
        # the fixpoint really separated the clusters
        assert np.array_equal(result.state_matrix.entries[0, 3:], [0, 0, 0])
        assert np.array_equal(result.state_matrix.entries[1, :3], [0, 0, 0])

    def test_coherence_invariants(self, rng):
        for _ in range(5):
            inst = random_instance(rng, 2, 5, float(rng.choice([0.25, 0.5])))
            result = solve(inst)
            plan = plan_from_map(result.assignment, inst)
            assert np.array_equal(plan.entries, result.plan.entries)
            assert is_compatible(result.path, result.plan, inst)
            assert m_alpha_cost(result.path, inst.alpha) == pytest.approx(
                result.cost, abs=1e-9
            )
            assert np.allclose(result.loads, result.plan.row_sums(), atol=1e-15)
            source = AtomicMeasure(
                inst.factories[result.loads > 1e-12],
                result.loads[result.loads > 1e-12],
            )
            assert check_balance(result.path, source, inst.household_measure())
            assert all(c == 1 for c in component_factory_counts(result, inst))

    def test_beam_fallback_flagged(self, rng):
        inst = random_instance(rng, 2, 5, 0.5)
        result = solve(inst, max_candidates=2, prune=False)
        assert result.mode == "heuristic-outer"
        assert not result.enumeration_complete
        # the beam still finds the optimum at this scale
        oracle = brute_force_oracle(inst)
        assert result.cost == pytest.approx(oracle.cost, abs=1e-9)

    def test_heuristic_inner_flagged(self, rng):
        inst = random_instance(rng, 1, 4, 0.5)
        result = solve(inst, exact_threshold=2)
        assert result.mode == "heuristic-inner"
        assert not result.inner_exact


class TestOracle:
    def test_single_factory_one_map(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0]],
                households=[[1.0, 1.0]],
                demands=[1.0],
            )
        )
        oracle = brute_force_oracle(inst)
        assert oracle.optimal_maps == ((0,),)
        assert oracle.maps_evaluated == 1

    def test_enumeration_size(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0], [4.0, 0.0]],
                households=[[0.5, 1.0], [2.0, 1.0], [3.5, 1.0]],
                demands=[1 / 3, 1 / 3, 1 / 3],
            )
        )
        oracle = brute_force_oracle(inst)
        assert oracle.maps_evaluated == 8

    def test_mirror_symmetry_ties(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[-1.0, 0.0], [1.0, 0.0]],
                households=[[0.0, 1.0], [0.0, -1.0]],
                demands=[0.5, 0.5],
            )
        )
        oracle = brute_force_oracle(inst)
        assert len(oracle.optimal_maps) >= 2

    def test_budget_refusal(self, rng):
        inst = random_instance(rng, 2, 5, 0.5)
        with pytest.raises(Refused):
            brute_force_oracle(inst, max_maps=10)

    def test_agrees_with_solve(self, rng):
        for _ in range(4):
            inst = random_instance(
                rng, int(rng.integers(2, 4)), int(rng.integers(3, 6)), 0.5
            )
            cache = GroupSolveCache(inst, exact_threshold=7)
            oracle = brute_force_oracle(inst, cache=cache)
            result = solve(inst, cache=cache)
            assert result.cost == pytest.approx(oracle.cost, abs=1e-9)
            assert result.assignment in oracle.optimal_maps
            assert result.assignment == min(oracle.optimal_maps)


class TestSimplexCheck:
    def test_single_factory_trivial(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[0.0, 0.0]],
                households=[[1.0, 1.0], [2.0, 0.0]],
                demands=[0.5, 0.5],
            )
        )
        report = verify_simplex_equality(inst)
        assert report.gap == pytest.approx(0.0, abs=1e-12)
        assert report.attained_at_vertex

    def test_symmetric_two_factory(self):
        inst = normalize(
            Instance(
                alpha=0.5,
                factories=[[-2.0, 0.0], [2.0, 0.0]],
                households=[[-2.0, 1.0], [2.0, 1.0], [0.0, 2.0], [0.0, -2.0]],
                demands=[0.25, 0.25, 0.25, 0.25],
            )
        )
        report = verify_simplex_equality(inst, grid_resolution=0.02)
        assert report.gap >= -1e-9
        assert report.gap == pytest.approx(0.0, abs=1e-9)

    def test_gap_never_negative(self, rng):
        for _ in range(3):
            inst = random_instance(rng, 2, 4, 0.4)
            report = verify_simplex_equality(inst, grid_resolution=0.05)
            assert report.gap >= -1e-9
            assert sum(report.optimal_loads) == pytest.approx(1.0, abs=1e-9)

    def test_size_guard(self, rng):
        inst = random_instance(rng, 2, 7, 0.5)
        with pytest.raises(Refused):
            verify_simplex_equality(inst)
