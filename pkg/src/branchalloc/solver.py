"""Top-level allocation solving: map search over the pruned candidate set.

The objective of an assignment map is the sum of independent single-source
shipping costs, one per factory over its household group, so map search
reduces to arithmetic over cached group solves.  The brute-force oracle
enumerates every map with exact group solves and is the package's ground
truth; the main solver prunes with the state-matrix fixpoint and must
always reproduce the oracle's optimum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import Refused
from .graph import TransportPath, TransportPlan, plan_from_map, union_paths
from .measures import AtomicMeasure, Instance
from .state import (
    StateMatrix,
    fixpoint_detailed,
    greedy_determination,
    initial_state,
)
from .steiner import (
    COINCIDENT_TOL,
    HARD_EXACT_LIMIT,
    SolveReport,
    solve_exact_batch,
    solve_single_source,
)

#: Two maps within this cost window count as tied optima.
TIE_TOL = 1e-9

#: Default cap on fully enumerated candidate maps.
DEFAULT_MAX_CANDIDATES = 10**6

#: Beam width for the fallback search when enumeration is refused.
BEAM_WIDTH = 64

#: Candidate counts up to this get their distinct groups batched up front.
_PREFETCH_LIMIT = 65536


class GroupSolveCache:
    """Memoized single-source solves keyed by (factory, household subset).

    Exact solves for subsets up to the threshold are batched by subset
    size, which amortizes topology enumeration across the whole powerset
    the oracle visits.
    """

    def __init__(self, instance: Instance, exact_threshold: int = 7):
        instance.require_normalized()
        self.instance = instance
        self.exact_threshold = exact_threshold
        self._reports: dict[tuple[int, frozenset], SolveReport] = {}

    def group_report(self, factory: int, group: frozenset) -> SolveReport:
        key = (factory, group)
        if key not in self._reports:
            self.prefetch([key])
        return self._reports[key]

    def group_cost(self, factory: int, group: frozenset) -> float:
        if not group:
            return 0.0
        return self.group_report(factory, group).cost

    def map_cost(self, assignment) -> float:
        groups = _groups_of(assignment, self.instance.num_factories)
        return sum(self.group_cost(i, g) for i, g in enumerate(groups) if g)

    def prefetch(self, keys) -> None:
        """Solve any missing (factory, subset) groups, batching by size.

        Households sitting exactly on their factory are served in place at
        zero cost, so batches group by the count of targets that actually
        need an edge.
        """
        inst = self.instance
        todo = [k for k in dict.fromkeys(keys) if k not in self._reports and k[1]]
        by_size: dict[int, list] = {}
        for factory, group in todo:
            idx = sorted(group)
            origin = inst.factories[factory]
            away = [
                j
                for j in idx
                if np.linalg.norm(inst.households[j] - origin) > COINCIDENT_TOL
            ]
            if not away:
                path = TransportPath(origin.reshape(1, -1), ())
                self._reports[(factory, group)] = SolveReport(
                    path=path, cost=0.0, exact=True, iterations=0, residual=0.0
                )
                continue
            by_size.setdefault(len(away), []).append((factory, group, away))
        for size, entries in sorted(by_size.items()):
            if size <= min(self.exact_threshold, HARD_EXACT_LIMIT):
                problems = [
                    (inst.factories[f], inst.households[away], inst.demands[away])
                    for f, _, away in entries
                ]
                reports = solve_exact_batch(problems, inst.alpha)
                for (f, group, _), report in zip(entries, reports):
                    self._reports[(f, group)] = report
            else:
                for f, group, away in entries:
                    measure = AtomicMeasure(inst.households[away], inst.demands[away])
                    self._reports[(f, group)] = solve_single_source(
                        inst.factories[f],
                        measure,
                        inst.alpha,
                        exact_threshold=self.exact_threshold,
                    )


def _groups_of(assignment, k: int) -> list[frozenset]:
    groups: list[set] = [set() for _ in range(k)]
    for j, i in enumerate(assignment):
        groups[int(i)].add(j)
    return [frozenset(g) for g in groups]


def evaluate_map(
    assignment,
    instance: Instance,
    exact_threshold: int = 7,
    cache: GroupSolveCache | None = None,
) -> tuple[float, TransportPath]:
    """Cost and shipping path of one assignment map.

    Each factory ships to its own household group along an independently
    optimal tree; factories with no households contribute nothing.
    """
    cache = cache or GroupSolveCache(instance, exact_threshold)
    groups = _groups_of(assignment, instance.num_factories)
    cache.prefetch((i, g) for i, g in enumerate(groups) if g)
    cost = 0.0
    parts = []
    for i, g in enumerate(groups):
        if not g:
            continue
        report = cache.group_report(i, g)
        cost += report.cost
        parts.append(report.path)
    path = union_paths(parts) if parts else TransportPath(
        np.zeros((0, instance.dimension)), ()
    )
    return cost, path


@dataclass(frozen=True)
class AllocationResult:
    """Solved allocation: the map, its plan, path, and provenance flags."""

    assignment: tuple
    cost: float
    plan: TransportPlan
    path: TransportPath
    loads: np.ndarray
    mode: str  # "exact" | "heuristic-inner" | "heuristic-outer"
    inner_exact: bool
    enumeration_complete: bool
    state_matrix: StateMatrix
    fixpoint_iterations: int
    candidates_evaluated: int
    pruned: bool

    @property
    def exact(self) -> bool:
        return self.mode == "exact"


def _enumerate_candidates(u: StateMatrix, ell: int):
    supports = [u.column_support(j) for j in range(ell)]
    return itertools.product(*supports)


def _best_map_by_enumeration(u, instance, cache):
    ell = instance.num_households
    count = u.candidate_count()
    if count <= _PREFETCH_LIMIT:
        keys = set()
        for combo in _enumerate_candidates(u, ell):
            for i, g in enumerate(_groups_of(combo, instance.num_factories)):
                if g:
                    keys.add((i, g))
        cache.prefetch(sorted(keys, key=lambda kg: (kg[0], sorted(kg[1]))))
    best_cost = None
    for combo in _enumerate_candidates(u, ell):
        cost = cache.map_cost(combo)
        if best_cost is None or cost < best_cost:
            best_cost = cost
    winner = None
    for combo in _enumerate_candidates(u, ell):
        if cache.map_cost(combo) <= best_cost + TIE_TOL:
            winner = combo
            break  # product order is lexicographic within the supports
    return winner, count


def _beam_search(u, instance, cache, width=BEAM_WIDTH):
    """Approximate search: extend partial maps column by column, keeping the
    cheapest ``width`` prefixes; columns in descending-demand order."""
    order = sorted(
        range(instance.num_households),
        key=lambda j: (-instance.demands[j], j),
    )
    beam: list[tuple[float, dict]] = [(0.0, {})]
    for j in order:
        extended = []
        for _, partial in beam:
            for s in u.column_support(j):
                nxt = dict(partial)
                nxt[j] = s
                groups: dict[int, frozenset] = {}
                for jj, ss in nxt.items():
                    groups[ss] = groups.get(ss, frozenset()) | {jj}
                cache.prefetch(groups.items())
                score = sum(cache.group_cost(i, g) for i, g in groups.items())
                extended.append((score, nxt))
        extended.sort(key=lambda t: (t[0], tuple(sorted(t[1].items()))))
        beam = extended[:width]
    return tuple(beam[0][1][j] for j in range(instance.num_households))


def solve(
    instance: Instance,
    exact_threshold: int = 7,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    prune: bool = True,
    directions=None,
    cache: GroupSolveCache | None = None,
) -> AllocationResult:
    """Find a minimum-cost assignment of households to factories.

    Runs the state-matrix fixpoint (unless pruning is disabled), attempts
    greedy determination, and otherwise enumerates every map consistent
    with the surviving candidates, with ties broken by lexicographic map
    order.  If the candidate count exceeds ``max_candidates`` a beam
    search runs instead and the result is flagged heuristic-outer.
    """
    instance.require_normalized()
    cache = cache or GroupSolveCache(instance, exact_threshold)
    if prune:
        fp = fixpoint_detailed(initial_state(instance), instance, directions)
        u_star, fp_iters = fp.matrix, fp.iterations
    else:
        u_star, fp_iters = initial_state(instance), 0
    assignment = None
    enumeration_complete = True
    candidates_evaluated = 0

    if prune:
        pinned = greedy_determination(u_star, instance)
        if pinned is not None:
            assignment = pinned
            candidates_evaluated = 1

    if assignment is None:
        count = u_star.candidate_count()
        if count > max_candidates:
            assignment = _beam_search(u_star, instance, cache)
            enumeration_complete = False
            candidates_evaluated = -1
        else:
            assignment, candidates_evaluated = _best_map_by_enumeration(
                u_star, instance, cache
            )

    cost, path = evaluate_map(assignment, instance, exact_threshold, cache)
    groups = _groups_of(assignment, instance.num_factories)
    inner_exact = all(
        cache.group_report(i, g).exact for i, g in enumerate(groups) if g
    )
    if not enumeration_complete:
        mode = "heuristic-outer"
    elif not inner_exact:
        mode = "heuristic-inner"
    else:
        mode = "exact"
    plan = plan_from_map(assignment, instance)
    return AllocationResult(
        assignment=tuple(int(i) for i in assignment),
        cost=float(cost),
        plan=plan,
        path=path,
        loads=plan.row_sums(),
        mode=mode,
        inner_exact=inner_exact,
        enumeration_complete=enumeration_complete,
        state_matrix=u_star,
        fixpoint_iterations=fp_iters,
        candidates_evaluated=candidates_evaluated,
        pruned=prune,
    )


@dataclass(frozen=True)
class OracleResult:
    optimal_maps: tuple
    cost: float
    maps_evaluated: int


def brute_force_oracle(
    instance: Instance,
    exact_threshold: int = 7,
    max_maps: int = DEFAULT_MAX_CANDIDATES,
    cache: GroupSolveCache | None = None,
) -> OracleResult:
    """Evaluate every assignment map with exact group solves.

    Returns the full set of optima (ties within ``TIE_TOL``) in
    lexicographic order.  Refuses when k^l exceeds ``max_maps`` or any
    group would exceed the exact-enumeration limit.
    """
    instance.require_normalized()
    k, ell = instance.num_factories, instance.num_households
    if k**ell > max_maps:
        raise Refused(f"{k}^{ell} maps exceed the enumeration budget {max_maps}")
    if ell > HARD_EXACT_LIMIT:
        raise Refused(
            f"groups of up to {ell} households exceed the exact Steiner "
            f"enumeration limit {HARD_EXACT_LIMIT}"
        )
    cache = cache or GroupSolveCache(instance, exact_threshold=max(exact_threshold, ell))
    # The full powerset will be touched; batch it all per factory up front.
    keys = []
    for i in range(k):
        for r in range(1, ell + 1):
            for combo in itertools.combinations(range(ell), r):
                keys.append((i, frozenset(combo)))
    cache.prefetch(keys)
    best_cost = min(
        cache.map_cost(combo) for combo in itertools.product(range(k), repeat=ell)
    )
    argmin = tuple(
        combo
        for combo in itertools.product(range(k), repeat=ell)
        if cache.map_cost(combo) <= best_cost + TIE_TOL
    )
    return OracleResult(
        optimal_maps=argmin,
        cost=float(best_cost),
        maps_evaluated=k**ell,
    )


@dataclass(frozen=True)
class SimplexCheckReport:
    """Outcome of sampling the load simplex against the assignment optimum."""

    assignment_cost: float
    grid_cost: float
    gap: float
    optimal_loads: tuple
    grid_resolution: float
    grid_points: int
    attained_at_vertex: bool


def verify_simplex_equality(
    instance: Instance, grid_resolution: float = 0.02
) -> SimplexCheckReport:
    """Check that map search attains the minimum over factory-load splits.

    Every sampled load vector is scored by the cheapest map whose loads
    fall within one grid step of it (map-form splits suffice for the
    minimum, which is what makes the grid evaluable at all); the grid
    minimum can therefore never undercut the assignment optimum, and it is
    attained at the optimal map's own load vector.
    """
    instance.require_normalized()
    k, ell = instance.num_factories, instance.num_households
    if k > 3 or ell > 6:
        raise Refused("simplex verification is limited to k <= 3, l <= 6")
    cache = GroupSolveCache(instance, exact_threshold=max(7, ell))
    maps = list(itertools.product(range(k), repeat=ell))
    costs = np.zeros(len(maps))
    load_vectors = np.zeros((len(maps), k))
    for idx, combo in enumerate(maps):
        groups = _groups_of(combo, k)
        cache.prefetch((i, g) for i, g in enumerate(groups) if g)
        costs[idx] = cache.map_cost(combo)
        for j, i in enumerate(combo):
            load_vectors[idx, i] += instance.demands[j]
    assignment_cost = float(costs.min())
    optimal_loads = load_vectors[int(costs.argmin())]

    steps = max(1, int(round(1.0 / grid_resolution)))
    if k == 1:
        grid = [np.array([1.0])]
    elif k == 2:
        grid = [np.array([t / steps, 1.0 - t / steps]) for t in range(steps + 1)]
    else:
        grid = [
            np.array([t1 / steps, t2 / steps, 1.0 - (t1 + t2) / steps])
            for t1 in range(steps + 1)
            for t2 in range(steps + 1 - t1)
        ]
    grid_cost = np.inf
    for point in grid:
        near = np.max(np.abs(load_vectors - point), axis=1) <= grid_resolution
        if near.any():
            grid_cost = min(grid_cost, float(costs[near].min()))
    gap = float(grid_cost - assignment_cost)
    return SimplexCheckReport(
        assignment_cost=assignment_cost,
        grid_cost=float(grid_cost),
        gap=gap,
        optimal_loads=tuple(float(x) for x in optimal_loads),
        grid_resolution=float(grid_resolution),
        grid_points=len(grid),
        attained_at_vertex=bool(abs(gap) <= TIE_TOL),
    )
