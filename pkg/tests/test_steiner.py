import itertools

import numpy as np
import pytest

from branchalloc.errors import ConvergenceFailure, InvalidPair, MalformedPath, Unsupported
from branchalloc.graph import check_balance, m_alpha_cost
from branchalloc.measures import AtomicMeasure
from branchalloc.steiner import (
    Topology,
    d_alpha_between,
    enumerate_full_topologies,
    relax_topology,
    solve_single_source,
)

from conftest import random_measure


def y_instance():
    origin = np.array([0.0, 0.0])
    targets = AtomicMeasure([[-1.0, 2.0], [1.0, 2.0]], [0.5, 0.5])
    return origin, targets


def bifurcation_grid_oracle(origin, targets, alpha, lo, hi, steps=60, rounds=4):
    """Independent optimum for one bifurcation: grid search plus refinement
    over the junction location; never calls the solver under test."""
    locs, masses = targets.locations, targets.masses
    total = float(masses.sum())

    def cost_at(b):
        c = total**alpha * np.linalg.norm(b - origin)
        for z, mmass in zip(locs, masses):
            c += mmass**alpha * np.linalg.norm(b - z)
        return c

    best = None
    for _ in range(rounds):
        xs = np.linspace(lo[0], hi[0], steps)
        ys = np.linspace(lo[1], hi[1], steps)
        for x, y in itertools.product(xs, ys):
            c = cost_at(np.array([x, y]))
            if best is None or c < best[0]:
                best = (c, np.array([x, y]))
        span = (np.asarray(hi) - np.asarray(lo)) / steps * 3
        lo = best[1] - span
        hi = best[1] + span
    return best


class TestTopologyEnumeration:
    def test_counts_match_double_factorial(self):
        # (2n-3)!! full topologies for n targets.
        expect = {1: 1, 2: 1, 3: 3, 4: 15, 5: 105, 6: 945}
        for n, count in expect.items():
            assert len(enumerate_full_topologies(n)) == count

    def test_topology_validation(self):
        Topology(2, (((0, 3), (1, 3), (2, 3))))  # the full Y
        Topology(2, ((0, 1), (0, 2)))  # the star
        with pytest.raises(MalformedPath):
            Topology(2, ((0, 3), (1, 3)))  # Steiner of degree 2
        with pytest.raises(MalformedPath):
            Topology(2, ((0, 1),))  # target 2 disconnected


class TestYInstance:
    def test_cost_and_bifurcation(self):
        origin, targets = y_instance()
        report = solve_single_source(origin, targets, 0.5)
        assert report.exact
        assert report.cost == pytest.approx(3.0, abs=1e-9)
        # The Steiner vertex is the one that is not a terminal.
        steiner = report.path.vertices[-1]
        assert np.linalg.norm(steiner - [0.0, 1.0]) < 1e-6

    def test_grid_refinement_oracle_agrees(self):
        origin, targets = y_instance()
        oracle_cost, oracle_b = bifurcation_grid_oracle(
            origin, targets, 0.5, lo=[-1.5, 0.0], hi=[1.5, 2.0]
        )
        report = solve_single_source(origin, targets, 0.5)
        assert report.cost == pytest.approx(oracle_cost, abs=1e-6)
        assert np.linalg.norm(oracle_b - [0.0, 1.0]) < 1e-4

    def test_v_shape_strictly_worse(self):
        origin, targets = y_instance()
        star = Topology(2, ((0, 1), (0, 2)))
        pts = np.vstack([origin, targets.locations])
        _, v_cost = relax_topology(star, pts, targets.masses, 0.5)
        assert v_cost == pytest.approx(np.sqrt(10.0), abs=1e-9)
        assert solve_single_source(origin, targets, 0.5).cost < v_cost - 0.1

    def test_alpha_one_star_optimal(self):
        # At linear cost the bifurcation collapses onto the origin.
        origin, targets = y_instance()
        full = Topology(2, ((0, 3), (1, 3), (2, 3)))
        star = Topology(2, ((0, 1), (0, 2)))
        pts = np.vstack([origin, targets.locations])
        _, y_cost = relax_topology(full, pts, targets.masses, 1.0)
        _, star_cost = relax_topology(star, pts, targets.masses, 1.0)
        assert star_cost <= y_cost + 1e-9
        report = solve_single_source(origin, targets, 1.0)
        assert report.cost == pytest.approx(np.sqrt(5.0), abs=1e-7)


class TestBasics:
    def test_single_target_closed_form(self):
        report = solve_single_source([0.0, 0.0], AtomicMeasure([[3.0, 4.0]], [0.7]), 0.6)
        assert report.cost == pytest.approx(0.7**0.6 * 5.0, abs=1e-12)
        assert report.path.num_edges == 1

    def test_collinear_chain(self):
        # Two targets beyond the origin on a ray: compare the two candidate
        # layouts by hand; shipping through the near target wins.
        origin = np.array([0.0, 0.0])
        m1, m2, alpha = 0.6, 0.4, 0.5
        targets = AtomicMeasure([[1.0, 0.0], [2.0, 0.0]], [m1, m2])
        chain = (m1 + m2) ** alpha * 1.0 + m2**alpha * 1.0
        star = (m1**alpha) * 1.0 + m2**alpha * 2.0
        report = solve_single_source(origin, targets, alpha)
        assert report.cost == pytest.approx(min(chain, star), abs=1e-9)
        assert check_balance(
            report.path, AtomicMeasure([origin], [1.0]), targets
        )

    def test_coincident_target_free(self):
        targets = AtomicMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
        report = solve_single_source([0.0, 0.0], targets, 0.5)
        assert report.cost == pytest.approx(0.5**0.5, abs=1e-12)

    def test_balance_of_solutions(self, rng):
        for _ in range(5):
            n = int(rng.integers(1, 6))
            targets = random_measure(rng, n)
            origin = rng.uniform(0, 4, 2)
            report = solve_single_source(origin, targets, 0.4)
            total = float(targets.masses.sum())
            assert check_balance(
                report.path, AtomicMeasure([origin], [total]), targets
            )
            assert report.cost == pytest.approx(
                m_alpha_cost(report.path, 0.4), abs=1e-9
            )

    def test_alpha_zero_minimizes_length(self):
        # Pure Steiner tree: the hub of an equilateral triangle beats the V
        # (total length side * sqrt(3) = 3 at circumradius 1, against the
        # two-side total 2 * sqrt(3)).
        pts = np.array([[0.0, 1.0], [-np.sqrt(3) / 2, -0.5], [np.sqrt(3) / 2, -0.5]])
        targets = AtomicMeasure(pts[1:], [0.5, 0.5])
        report = solve_single_source(pts[0], targets, 0.0)
        assert report.cost == pytest.approx(3.0, abs=1e-6)


class TestRelaxation:
    def test_star_topology_positions_unchanged(self):
        origin, targets = y_instance()
        star = Topology(2, ((0, 1), (0, 2)))
        pts = np.vstack([origin, targets.locations])
        positions, cost = relax_topology(star, pts, targets.masses, 0.5)
        assert np.array_equal(positions, pts)

    def test_symmetric_steiner_on_axis(self):
        origin, targets = y_instance()
        full = Topology(2, ((0, 3), (1, 3), (2, 3)))
        pts = np.vstack([origin, targets.locations])
        positions, _ = relax_topology(full, pts, targets.masses, 0.5)
        assert abs(positions[3][0]) < 1e-7

    def test_monotone_cost_history(self, rng):
        for _ in range(5):
            n = int(rng.integers(2, 6))
            targets = random_measure(rng, n)
            origin = rng.uniform(0, 4, 2)
            topo = Topology(n, enumerate_full_topologies(n)[0])
            pts = np.vstack([origin, targets.locations])
            _, _, history = relax_topology(
                topo, pts, targets.masses, 0.5, return_history=True
            )
            history = np.asarray(history)
            assert np.all(np.diff(history) <= 1e-9 * (1.0 + history[:-1]))

    def test_collapse_onto_target(self):
        # Pull so hard toward one target that the junction lands on it.
        origin = np.array([0.0, 0.0])
        targets = AtomicMeasure([[1.0, 0.0], [2.0, 0.0]], [0.05, 0.95])
        report = solve_single_source(origin, targets, 0.9)
        for tail, head, _ in report.path.edges:
            assert report.path.edge_length(0) > 0

    def test_convergence_failure_carries_iterate(self):
        origin, targets = y_instance()
        full = Topology(2, ((0, 3), (1, 3), (2, 3)))
        pts = np.vstack([origin, targets.locations])
        with pytest.raises(ConvergenceFailure) as err:
            relax_topology(full, pts, targets.masses, 0.5, max_iters=2)
        assert err.value.positions is not None
        assert err.value.residual > 1e-10

    def test_first_order_certificate(self, rng):
        # At every surviving interior junction the w^alpha-weighted unit
        # edge vectors balance.
        for _ in range(5):
            n = int(rng.integers(3, 6))
            targets = random_measure(rng, n)
            origin = rng.uniform(0, 4, 2)
            alpha = float(rng.uniform(0.2, 0.8))
            report = solve_single_source(origin, targets, alpha)
            path = report.path
            terminal_like = np.vstack([origin[None], targets.locations])
            for v in range(path.num_vertices):
                deg_edges = [
                    (t, h, w) for t, h, w in path.edges if v in (t, h)
                ]
                if len(deg_edges) != 3:
                    continue
                if np.min(np.linalg.norm(terminal_like - path.vertices[v], axis=1)) < 1e-7:
                    continue
                force = np.zeros(2)
                for t, h, w in deg_edges:
                    other = h if t == v else t
                    vec = path.vertices[other] - path.vertices[v]
                    force += w**alpha * vec / np.linalg.norm(vec)
                assert np.linalg.norm(force) < 1e-6

    def test_exact_never_worse_than_heuristic(self, rng):
        for _ in range(5):
            n = int(rng.integers(3, 7))
            targets = random_measure(rng, n)
            origin = rng.uniform(0, 4, 2)
            alpha = float(rng.uniform(0.1, 0.9))
            exact = solve_single_source(origin, targets, alpha, exact_threshold=7)
            heur = solve_single_source(origin, targets, alpha, exact_threshold=1)
            assert exact.exact and not heur.exact
            assert exact.cost <= heur.cost + 1e-9


class TestDistance:
    def test_identity(self, rng):
        m = random_measure(rng, 3)
        assert d_alpha_between(m, m, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_two_point_closed_form(self):
        a = AtomicMeasure([[0.0, 0.0]], [0.49])
        b = AtomicMeasure([[3.0, 4.0]], [0.49])
        assert d_alpha_between(a, b, 0.5) == pytest.approx(0.49**0.5 * 5.0, abs=1e-12)

    def test_scaling_law(self, rng):
        for lam in (0.25, 4.0):
            for _ in range(5):
                n = int(rng.integers(1, 7))
                targets = random_measure(rng, n)
                origin = rng.uniform(0, 4, 2)
                alpha = float(rng.uniform(0.1, 0.9))
                total = float(targets.masses.sum())
                a = AtomicMeasure([origin], [total])
                base = d_alpha_between(a, targets, alpha)
                scaled = d_alpha_between(
                    AtomicMeasure([origin], [lam * total]),
                    AtomicMeasure(targets.locations, lam * targets.masses),
                    alpha,
                )
                assert scaled / base == pytest.approx(lam**alpha, rel=1e-9)

    def test_mass_mismatch_rejected(self):
        a = AtomicMeasure([[0.0, 0.0]], [1.0])
        b = AtomicMeasure([[1.0, 0.0]], [0.5])
        with pytest.raises(InvalidPair):
            d_alpha_between(a, b, 0.5)

    def test_triangle_inequality_sampled(self, rng):
        # Endpoints are single atoms so every leg is solved exactly.
        for _ in range(25):
            total = float(rng.uniform(0.5, 2.0))
            x = rng.uniform(0, 4, 2)
            ymid = random_measure(rng, int(rng.integers(1, 4)), total=total)
            z = rng.uniform(0, 4, 2)
            a = AtomicMeasure([x], [total])
            c = AtomicMeasure([z], [total])
            alpha = float(rng.uniform(0.1, 0.9))
            d_ac = d_alpha_between(a, c, alpha)
            d_ab = d_alpha_between(a, ymid, alpha)
            d_bc = d_alpha_between(ymid, c, alpha)
            assert d_ac <= d_ab + d_bc + 1e-9

    def test_multi_atom_assignment_split(self):
        a = AtomicMeasure([[0.0, 0.0], [10.0, 0.0]], [0.5, 0.5])
        b = AtomicMeasure([[0.0, 1.0], [10.0, 1.0]], [0.5, 0.5])
        got = d_alpha_between(a, b, 0.5)
        assert got == pytest.approx(2 * 0.5**0.5, abs=1e-9)

    def test_multi_atom_without_matching_split(self):
        a = AtomicMeasure([[0.0, 0.0], [10.0, 0.0]], [0.4, 0.6])
        b = AtomicMeasure([[0.0, 1.0], [10.0, 1.0]], [0.5, 0.5])
        with pytest.raises(Unsupported):
            d_alpha_between(a, b, 0.5)

    def test_alpha_zero_supported(self):
        a = AtomicMeasure([[0.0, 0.0]], [1.0])
        b = AtomicMeasure([[1.0, 0.0], [2.0, 0.0]], [0.5, 0.5])
        assert d_alpha_between(a, b, 0.0) == pytest.approx(2.0, abs=1e-7)
