"""Binary exclusion matrices and their sound update operators.

A state matrix U marks with u[s, j] = 0 that no optimal assignment sends
household j to factory s.  Row load bounds w_i(U) = sum of demands still
admissible at factory i feed the region predicates; three update operators
(marginal regions, neighborhood shadows, projectional cuts) only ever turn
ones into zeros, so iterating their entrywise minimum reaches a fixpoint
U* in at most k*l steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .criteria import (
    SOUNDNESS_MARGIN,
    Projection,
    centered_projection,
    least_deviation_direction,
    neighborhood_stopover,
    projection_constant,
    rho,
)
from .errors import ConstantUndefined, Infeasible
from .measures import Instance


@dataclass(frozen=True)
class StateMatrix:
    """k-by-l matrix over {0, 1}; every column keeps at least one candidate."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise Infeasible("state matrix must be 2-d")
        if not np.isin(entries, (0, 1)).all():
            raise Infeasible("state matrix entries must be 0 or 1")
        entries = entries.astype(np.uint8)
        empty = np.nonzero(entries.sum(axis=0) == 0)[0]
        if empty.size:
            raise Infeasible(
                f"household(s) {empty.tolist()} lost every candidate factory"
            )
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.entries, other.entries)

    def zeros(self) -> int:
        return int(self.entries.size - self.entries.sum())

    def column_support(self, j: int) -> list[int]:
        return [int(i) for i in np.nonzero(self.entries[:, j])[0]]

    def candidate_count(self) -> int:
        return int(np.prod(self.entries.sum(axis=0), dtype=np.float64))

    def row_strings(self) -> list[str]:
        return ["".join(str(int(v)) for v in row) for row in self.entries]


def initial_state(instance: Instance) -> StateMatrix:
    """The all-ones matrix: before any analysis nothing is excluded."""
    return StateMatrix(np.ones((instance.num_factories, instance.num_households)))


def load_bounds(u: StateMatrix, instance: Instance) -> np.ndarray:
    """w_i(U): the most demand factory i could still be serving."""
    return u.entries.astype(float) @ instance.demands


def weight_matrix(u: StateMatrix, instance: Instance) -> np.ndarray:
    """w_ij(U) = rho(w_i(U), n_j) where defined; NaN where w_i(U) < n_j."""
    w = load_bounds(u, instance)
    k, ell = u.shape
    out = np.full((k, ell), np.nan)
    for i in range(k):
        for j in range(ell):
            if w[i] >= instance.demands[j]:
                out[i, j] = rho(instance.alpha, float(w[i]), float(instance.demands[j]))
    return out


def update_marginal(u: StateMatrix, instance: Instance) -> StateMatrix:
    """Zero u[i, j] when some other factory is w_ij(U)-closer to household j.

    The load bound w_i(U) only overstates the true load of any optimal
    map, and the saving ratio is decreasing in it, so the region tested is
    contained in the true never-assign region: the update is sound.
    """
    instance.require_normalized()
    k, ell = u.shape
    if k == 1:
        return u
    entries = u.entries.copy()
    w = load_bounds(u, instance)
    dist = np.linalg.norm(
        instance.households[None, :, :] - instance.factories[:, None, :], axis=2
    )  # (k, l)
    for i in range(k):
        for j in range(ell):
            if entries[i, j] == 0:
                continue
            w_ij = rho(instance.alpha, float(w[i]), float(instance.demands[j]))
            others = np.delete(dist[:, j], i)
            if float(others.min()) < w_ij * dist[i, j] - SOUNDNESS_MARGIN:
                entries[i, j] = 0
    return StateMatrix(entries)


def update_neighborhood(u: StateMatrix, instance: Instance) -> StateMatrix:
    """Propagate exclusions to smaller households shadowed by excluded ones.

    For every zero u[s, h] and every j with n_j <= n_h, household j is also
    excluded from s when it sits so close to y_h that rerouting j's demand
    through h's (unknown) factory is certainly cheaper; the detour bound
    maximizes over h's surviving candidates.
    """
    instance.require_normalized()
    k, ell = u.shape
    entries = u.entries.copy()
    w = load_bounds(u, instance)
    demands = instance.demands
    for s in range(k):
        for h in range(ell):
            if u.entries[s, h] != 0:
                continue
            candidates = u.column_support(h)
            for j in range(ell):
                if j == h or entries[s, j] == 0 or demands[j] > demands[h]:
                    continue
                detour = neighborhood_stopover(j, h, candidates, w, instance)
                if detour is None:
                    continue
                lhs = float(
                    np.linalg.norm(instance.households[j] - instance.households[h])
                ) + detour
                rhs = rho(instance.alpha, float(w[s]), float(demands[j])) * float(
                    np.linalg.norm(instance.households[j] - instance.factories[s])
                )
                if lhs < rhs - SOUNDNESS_MARGIN:
                    entries[s, j] = 0
    return StateMatrix(entries)


def default_directions(
    u: StateMatrix, instance: Instance, factory: int
) -> list[Projection]:
    """Coordinate axes plus the least-width direction for one factory's set."""
    m = instance.dimension
    pts = _projection_point_set(u, instance, factory)
    dirs = [np.eye(m)[t] for t in range(m)]
    if m == 2:
        dirs.append(least_deviation_direction(pts))
    return [centered_projection(pts, d) for d in dirs]


def _projection_point_set(u: StateMatrix, instance: Instance, factory: int):
    mask = u.entries[factory].astype(bool)
    return np.vstack([instance.households[mask], instance.factories])


def update_projectional(
    u: StateMatrix, instance: Instance, directions=None
) -> StateMatrix:
    """Cut households beyond an unbridgeable gap in some 1-d shadow.

    For each factory i and projection, the households still admissible at
    i are ordered along the line; a gap wider than 2 C R_i plus the detour
    to the nearest other factory proves that everything on the far side of
    the gap (relative to x_i) is served elsewhere.  The deviation radius
    R_i is taken over i's admissible households together with all
    factories, which dominates both point sets the comparison argument
    touches.  Disabled (returns u unchanged) where the constant C is
    undefined.
    """
    instance.require_normalized()
    k, ell = u.shape
    if k == 1:
        return u
    try:
        c_const = projection_constant(instance.dimension, instance.alpha)
    except ConstantUndefined:
        return u
    entries = u.entries.copy()
    for i in range(k):
        cols = np.nonzero(u.entries[i])[0]
        if cols.size == 0:
            continue
        pts = _projection_point_set(u, instance, i)
        if directions is None:
            projections = default_directions(u, instance, i)
        else:
            projections = list(directions)
        for pi in projections:
            r_i = float(pi.deviations(pts).max())
            t_h = pi.coordinates(instance.households[cols])
            order = np.argsort(t_h, kind="stable")
            ordered = cols[order]
            tv = t_h[order]
            t_fac = pi.coordinates(instance.factories)
            t_i = float(t_fac[i])
            alt = np.delete(t_fac, i)
            cut_low = -1
            cut_high = len(ordered)
            for pos in range(len(ordered)):
                best_alt = float(np.abs(alt - tv[pos]).min())
                threshold = 2.0 * c_const * r_i + best_alt + SOUNDNESS_MARGIN
                gap_next = tv[pos + 1] - tv[pos] if pos + 1 < len(ordered) else np.inf
                gap_prev = tv[pos] - tv[pos - 1] if pos > 0 else np.inf
                if min(gap_next, t_i - tv[pos]) > threshold:
                    cut_low = max(cut_low, pos)
                if min(gap_prev, tv[pos] - t_i) > threshold:
                    cut_high = min(cut_high, pos)
            for pos in range(len(ordered)):
                if pos <= cut_low or pos >= cut_high:
                    entries[i, ordered[pos]] = 0
    return StateMatrix(entries)


def combine_min(u: StateMatrix, v: StateMatrix) -> StateMatrix:
    """Entrywise minimum: pooling two sound exclusion sets stays sound."""
    if u.shape != v.shape:
        raise Infeasible("state matrices must share a shape")
    return StateMatrix(np.minimum(u.entries, v.entries))


@dataclass(frozen=True)
class FixpointResult:
    matrix: StateMatrix
    iterations: int
    zero_history: tuple


def fixpoint_detailed(
    u0: StateMatrix, instance: Instance, directions=None
) -> FixpointResult:
    """Iterate the min-combined updates until the matrix stops changing."""
    current = u0
    history = [current.zeros()]
    iterations = 0
    while True:
        iterations += 1
        nxt = combine_min(
            combine_min(
                update_marginal(current, instance),
                update_neighborhood(current, instance),
            ),
            update_projectional(current, instance, directions),
        )
        history.append(nxt.zeros())
        if nxt == current:
            return FixpointResult(
                matrix=nxt, iterations=iterations, zero_history=tuple(history)
            )
        current = nxt


def fixpoint(u0: StateMatrix, instance: Instance, directions=None) -> StateMatrix:
    """The stable matrix U*; each strict step removes at least one entry."""
    return fixpoint_detailed(u0, instance, directions).matrix


def greedy_determination(u: StateMatrix, instance: Instance):
    """Pin households one by one, largest demand first.

    Household j pins to the single candidate left after discarding every
    factory s that is excluded by the marginal region or by a
    neighborhood shadow of an earlier pinned household h with s_h != s.
    Returns the full assignment tuple when every household pins uniquely,
    otherwise None.
    """
    instance.require_normalized()
    k, ell = u.shape
    demands = instance.demands
    w = load_bounds(u, instance)
    dist = np.linalg.norm(
        instance.households[None, :, :] - instance.factories[:, None, :], axis=2
    )
    order = sorted(range(ell), key=lambda j: (-demands[j], j))
    pinned: dict[int, int] = {}
    for j in order:
        support = u.column_support(j)
        survivors = []
        for s in support:
            if _marginal_excludes(u, instance, w, dist, s, j):
                continue
            if any(
                s_h != s
                and _shadow_excludes(u, instance, w, s, j, h)
                for h, s_h in pinned.items()
            ):
                continue
            survivors.append(s)
        if len(survivors) != 1:
            return None
        pinned[j] = survivors[0]
    return tuple(pinned[j] for j in range(ell))


def _marginal_excludes(u, instance, w, dist, s, j) -> bool:
    if u.shape[0] == 1:
        return False
    w_sj = rho(instance.alpha, float(w[s]), float(instance.demands[j]))
    others = np.delete(dist[:, j], s)
    return float(others.min()) < w_sj * dist[s, j] - SOUNDNESS_MARGIN


def _shadow_excludes(u, instance, w, s, j, h) -> bool:
    if instance.demands[j] > instance.demands[h]:
        return False
    detour = neighborhood_stopover(j, h, u.column_support(h), w, instance)
    if detour is None:
        return False
    lhs = float(np.linalg.norm(instance.households[j] - instance.households[h])) + detour
    rhs = rho(instance.alpha, float(w[s]), float(instance.demands[j])) * float(
        np.linalg.norm(instance.households[j] - instance.factories[s])
    )
    return lhs < rhs - SOUNDNESS_MARGIN
