"""Single-source concave-cost shipping trees.

Computes the minimum cost sum(w^alpha * length) over trees shipping mass
from one origin to an atomic target measure.  Small problems are solved
exactly by enumerating every full Steiner topology (with degenerate
collapses) and relaxing Steiner positions per topology; larger problems
fall back to greedy agglomeration plus leaf-swap local search.

Vertex convention inside a topology: 0 is the origin, 1..n are targets,
n+1..n+s are Steiner nodes.  Steiner nodes have degree 3; the origin may
have any positive degree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceFailure, InvalidPair, MalformedPath, Refused, Unsupported
from .graph import TransportPath, m_alpha_cost
from .measures import AtomicMeasure, mass

#: Position-update tolerance for Steiner relaxation.
POSITION_TOL = 1e-10

#: Edges shorter than this collapse when the relaxed tree is read off, and
#: their endpoints are merged during relaxation (a collapsed pair left as a
#: stiff near-zero spring would poison the conditioning of the reweighted
#: system).
COLLAPSE_TOL = 1e-9

#: Targets closer than this to the origin are served at zero cost in place.
COINCIDENT_TOL = 1e-12

MAX_ITERS = 10000

#: Distances are floored here inside reweighting to keep arithmetic finite.
_DIST_FLOOR = 1e-12

#: A problem whose shortest active edge is below this has its step damped
#: by 0.5 while the collapse resolves.
_COLLAPSE_GUARD = 1e-7

#: Pairs closer than this (times one plus the coordinate scale) merge during
#: relaxation.  The reweighted solve carries O(eps * scale / d) noise on a
#: pair at distance d, so a collapsing pair hovers near sqrt(eps * scale)
#: ~ 1e-8 and would never reach the collapse tolerance on its own; merging
#: slightly above that floor removes the stiff mode exactly.
_MERGE_TOL = 5e-8

#: Cap on simultaneous (problem, topology) pairs in one relaxation batch.
_MAX_BATCH_PAIRS = 60000

#: Cost-stall retirement: descent is monotone, so a window of iterations
#: that improves the cost by less than this (relative) threshold means the
#: cost has converged even if collapsed or glacial geometry leaves position
#: noise above the position tolerance.
_STALL_WINDOW = 30
_STALL_TOL = 2e-12

#: Relative margin around the loose-pass minimum inside which topologies
#: are refined at full tolerance.
_SHORTLIST_MARGIN = 1e-4

#: Largest target count enumerated exactly, no matter the threshold: the
#: full-topology count (2n-3)!! leaves desk scale shortly above this.
HARD_EXACT_LIMIT = 8


# ---------------------------------------------------------------------------
# Topologies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Topology:
    """Combinatorial tree over {origin} + targets + Steiner nodes."""

    n_targets: int
    edges: tuple  # of (u, v) vertex id pairs

    def __post_init__(self):
        n = self.n_targets
        edges = tuple((int(u), int(v)) for u, v in self.edges)
        used = {v for e in edges for v in e}
        n_vertices = max((max(used) + 1) if used else 1, n + 1)
        n_steiner = max(0, n_vertices - n - 1)
        if n_steiner > max(0, n - 1):
            raise MalformedPath(f"{n_steiner} Steiner nodes exceeds n-1 = {n - 1}")
        degree = np.zeros(n_vertices, dtype=int)
        for u, v in edges:
            degree[u] += 1
            degree[v] += 1
        if n >= 1 and len(edges) != n_vertices - 1:
            raise MalformedPath("topology must be a tree")
        for t in range(1, n + 1):
            if degree[t] < 1:
                raise MalformedPath(f"target {t} is disconnected")
        for s in range(n + 1, n_vertices):
            if degree[s] != 3:
                raise MalformedPath(f"Steiner node {s} has degree {degree[s]}, need 3")
        _assert_connected(n_vertices, edges)
        object.__setattr__(self, "edges", edges)

    @property
    def n_steiner(self) -> int:
        used = {v for e in self.edges for v in e}
        return max(0, (max(used) + 1) - self.n_targets - 1) if used else 0


def _assert_connected(n_vertices: int, edges) -> None:
    if n_vertices <= 1:
        return
    adj = {v: [] for v in range(n_vertices)}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    stack = [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) != n_vertices:
        raise MalformedPath("topology is disconnected")


def enumerate_full_topologies(n_targets: int) -> list[tuple]:
    """All full Steiner topologies as edge tuples, in deterministic order.

    Every tree over the terminals arises as a degenerate limit of one of
    these, so relaxing each with collapses searches the whole tree space.
    The count is (2n-3)!! for n targets.
    """
    n = n_targets
    if n < 1:
        raise Unsupported("need at least one target")
    if n == 1:
        return [((0, 1),)]
    topologies = [((0, n + 1), (1, n + 1), (2, n + 1))]
    next_steiner = n + 2
    for t in range(3, n + 1):
        grown = []
        for topo in topologies:
            for e_idx, (u, v) in enumerate(topo):
                s = next_steiner
                new_topo = topo[:e_idx] + topo[e_idx + 1 :] + ((u, s), (s, v), (t, s))
                grown.append(new_topo)
        topologies = grown
        next_steiner += 1
    return topologies


def _root_topology(n: int, edges):
    """Orient edges away from the origin; returns (oriented edges, below sets).

    ``below[e]`` is the frozenset of target ids in the subtree hanging under
    oriented edge e; the edge weight is the total target mass down there.
    """
    adj: dict[int, list[int]] = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    parent = {0: -1}
    order = [0]
    stack = [0]
    while stack:
        cur = stack.pop()
        for nxt in adj[cur]:
            if nxt not in parent:
                parent[nxt] = cur
                order.append(nxt)
                stack.append(nxt)
    below_sets: dict[int, set] = {v: set() for v in parent}
    for v in reversed(order):
        if 1 <= v <= n:
            below_sets[v].add(v)
        if parent[v] != -1:
            below_sets[parent[v]].update(below_sets[v])
    oriented = [(parent[v], v) for v in order if parent[v] != -1]
    below = [frozenset(below_sets[v]) for _, v in oriented]
    return oriented, below


def canonical_encoding(n: int, edges) -> tuple:
    """Label-invariant encoding used to break exact cost ties.

    Steiner nodes are relabeled by a BFS from the origin that visits
    children ordered by the smallest target id reachable through them;
    the encoding is the sorted relabeled edge list.
    """
    oriented, below = _root_topology(n, edges)
    children: dict[int, list[tuple[int, int]]] = {}
    for (p, c), bset in zip(oriented, below):
        children.setdefault(p, []).append((min(bset) if bset else 10 * n, c))
    relabel = {v: v for v in range(n + 1)}
    next_id = n + 1
    queue = [0]
    while queue:
        cur = queue.pop(0)
        for _, child in sorted(children.get(cur, [])):
            if child > n:
                relabel[child] = next_id
                next_id += 1
            queue.append(child)
    return tuple(
        sorted((min(relabel[u], relabel[v]), max(relabel[u], relabel[v])) for u, v in edges)
    )


class _TopologyTable:
    """Structural arrays shared by every problem with the same target count."""

    def __init__(self, n: int):
        self.n = n
        raw = enumerate_full_topologies(n)
        self.count = len(raw)
        n_steiner = max(0, n - 1)
        n_edges = len(raw[0])
        self.n_steiner = n_steiner
        self.n_edges = n_edges
        self.n_vertices = n + 1 + n_steiner
        edges = np.zeros((self.count, n_edges, 2), dtype=np.int32)
        # Bitmask of targets hanging below each oriented edge; combined with
        # a per-problem subset-sum table this yields edge weights with no
        # large intermediates even at the (2n-3)!! topology counts.
        below_mask = np.zeros((self.count, n_edges), dtype=np.int32)
        encodings = []
        for t_idx, topo in enumerate(raw):
            oriented, below = _root_topology(n, topo)
            for e_idx, ((p, c), bset) in enumerate(zip(oriented, below)):
                edges[t_idx, e_idx] = (p, c)
                for target in bset:
                    below_mask[t_idx, e_idx] |= 1 << (target - 1)
            encodings.append(canonical_encoding(n, topo))
        self.edges = edges
        self.below_mask = below_mask
        self.encodings = encodings


@lru_cache(maxsize=None)
def _topology_table(n: int) -> _TopologyTable:
    return _TopologyTable(n)


def _subset_sums(masses: np.ndarray) -> np.ndarray:
    """sums[bitmask] = total mass of the targets selected by the bitmask."""
    sums = np.zeros(1)
    for w in masses:
        sums = np.concatenate([sums, sums + w])
    return sums


# ---------------------------------------------------------------------------
# Batched fixed-point relaxation
# ---------------------------------------------------------------------------


def _scatter_rows(idx, weights, size):
    return np.bincount(idx, weights=weights, minlength=size)


def _relax_core(
    term_pos,
    edges,
    w_alpha,
    n_steiner: int,
    tol: float = POSITION_TOL,
    max_iters: int = MAX_ITERS,
    stall_window: int = _STALL_WINDOW,
    stall_tol: float = _STALL_TOL,
    init_steiner=None,
    history: list | None = None,
):
    """Reweighted-barycenter fixed point on a batch of fixed topologies.

    term_pos (P,T,m), edges (P,E,2) with vertex ids < T terminal and >= T
    Steiner, w_alpha (P,E).  Each iteration recomputes the barycentric
    weights w^alpha / dist and solves the tree-structured linear system for
    all Steiner positions jointly (iteratively reweighted least squares);
    the solved step minimizes a quadratic majorizer of the cost, so the
    cost sequence is non-increasing.  A safeguarded geometric extrapolation
    collapses slow linear tails.

    Vertex pairs driven below the collapse tolerance are merged onto one
    representative (terminals win), which removes the stiff spring a
    coincident pair would otherwise put into the system.  A problem
    retires when its position update drops below ``tol`` or its monotone
    cost has stalled; the last update is reported as the residual.

    Returns (X, cost, residual, iters); X rows follow representatives, so
    merged vertices carry identical coordinates.
    """
    P, T, m = term_pos.shape
    S = n_steiner
    V = T + S
    X = np.zeros((P, V, m))
    X[:, :T] = term_pos
    eu, ev = edges[..., 0].astype(np.int64), edges[..., 1].astype(np.int64)
    arp = np.arange(P)[:, None]

    def _metrics(Xc, rep, euc, evc, wc):
        nloc = Xc.shape[0]
        a = np.arange(nloc)[:, None]
        ue = np.take_along_axis(rep, euc, axis=1)
        ve = np.take_along_axis(rep, evc, axis=1)
        act = ue != ve
        pu = Xc[a, ue]
        pv = Xc[a, ve]
        d = np.linalg.norm(pu - pv, axis=2)
        cost = np.sum(np.where(act, wc * d, 0.0), axis=1)
        return ue, ve, act, d, cost, pu, pv

    if S == 0:
        rep0 = np.tile(np.arange(V, dtype=np.int64), (P, 1))
        cost = _metrics(X, rep0, eu, ev, w_alpha)[4]
        if history is not None and P == 1:
            history.append(float(cost[0]))
        return X, cost, np.zeros(P), np.zeros(P, dtype=int)

    if init_steiner is not None:
        X[:, T:] = init_steiner
    else:
        # Neighbor-mean smoothing from the terminal centroid gives a spread,
        # deterministic start.
        X[:, T:] = term_pos.mean(axis=1, keepdims=True)
        for _ in range(5):
            num = np.zeros((P * S, m))
            den = np.zeros(P * S)
            for a_end, b_end in ((eu, ev), (ev, eu)):
                sm = a_end >= T
                idx = (arp * S + (a_end - T))[sm]
                other = X[arp, b_end][sm]
                den += _scatter_rows(idx, np.ones(idx.size), P * S)
                for dim in range(m):
                    num[:, dim] += _scatter_rows(idx, other[:, dim], P * S)
            X[:, T:] = (num / np.maximum(den, 1.0)[:, None]).reshape(P, S, m)

    rep = np.tile(np.arange(V, dtype=np.int64), (P, 1))
    residual = np.full(P, np.inf)
    iters = np.full(P, max_iters, dtype=int)
    final_idx = np.arange(P)  # global index of each still-active problem
    scale = term_pos.reshape(P, -1).max(axis=1) - term_pos.reshape(P, -1).min(axis=1)
    merge_tol = np.maximum(_MERGE_TOL * (1.0 + scale), COLLAPSE_TOL)

    Xa, eua, eva, wa, repa = X, eu, ev, w_alpha, rep
    merge_tol_a = merge_tol
    na = P
    delta_prev = np.full(na, np.inf)
    window_mark = np.full(na, np.inf)
    prev_snorm = np.full(na, np.nan)
    sidx = np.arange(S)

    it = 0
    while final_idx.size and it < max_iters:
        it += 1
        na = Xa.shape[0]
        ara = np.arange(na)[:, None]
        ue, ve, act, d, cost_now, pu, pv = _metrics(Xa, repa, eua, eva, wa)

        # Merge collapsed pairs (never two terminals); repeat the mapping so
        # chained merges settle onto one representative.
        coll = act & (d < merge_tol_a[:, None]) & ~((ue < T) & (ve < T))
        if coll.any():
            for p in np.nonzero(coll.any(axis=1))[0]:
                r = repa[p]
                for e in np.nonzero(coll[p])[0]:
                    a_rep, b_rep = int(r[ue[p, e]]), int(r[ve[p, e]])
                    while int(r[a_rep]) != a_rep:
                        a_rep = int(r[a_rep])
                    while int(r[b_rep]) != b_rep:
                        b_rep = int(r[b_rep])
                    if a_rep == b_rep:
                        continue
                    if b_rep < a_rep:
                        a_rep, b_rep = b_rep, a_rep
                    if a_rep < T and b_rep < T:
                        continue
                    r[b_rep] = a_rep
                flat = r.copy()
                for _ in range(V):
                    nxt = flat[flat]
                    if np.array_equal(nxt, flat):
                        break
                    flat = nxt
                repa[p] = flat
            Xa[:, T:] = Xa[ara, repa[:, T:]]  # followers track their leader
            ue, ve, act, d, cost_now, pu, pv = _metrics(Xa, repa, eua, eva, wa)

        if history is not None and P == 1 and it > 1:
            history.append(float(cost_now[0]))
        done = delta_prev <= tol
        if it % stall_window == 0:
            done |= (window_mark - cost_now) <= stall_tol * (1.0 + np.abs(cost_now))
            window_mark = cost_now.copy()
        if done.any():
            retire = final_idx[done]
            X[retire] = Xa[done]
            rep[retire] = repa[done]
            residual[retire] = np.where(np.isfinite(delta_prev[done]), delta_prev[done], 0.0)
            iters[retire] = it - 1
            keep = ~done
            final_idx = final_idx[keep]
            if not final_idx.size:
                break
            Xa, eua, eva, wa, repa = Xa[keep], eua[keep], eva[keep], wa[keep], repa[keep]
            ue, ve, act, d = ue[keep], ve[keep], act[keep], d[keep]
            pu, pv = pu[keep], pv[keep]
            delta_prev, window_mark = delta_prev[keep], window_mark[keep]
            prev_snorm = prev_snorm[keep]
            merge_tol_a = merge_tol_a[keep]
            na = Xa.shape[0]
            ara = np.arange(na)[:, None]

        c = np.where(act, wa / np.maximum(d, _DIST_FLOOR), 0.0)
        su, sv = ue - T, ve - T
        u_s = (ue >= T) & act
        v_s = (ve >= T) & act
        pidx = np.broadcast_to(np.arange(na)[:, None], ue.shape)

        diag = np.zeros(na * S)
        for sm, s_of in ((u_s, su), (v_s, sv)):
            idx = (pidx * S + s_of)[sm]
            diag += _scatter_rows(idx, c[sm], na * S)
        A = np.zeros((na, S, S))
        A[:, sidx, sidx] = diag.reshape(na, S)
        both = u_s & v_s
        if both.any():
            idx = (pidx * S * S + su * S + sv)[both]
            off = _scatter_rows(idx, c[both], na * S * S).reshape(na, S, S)
            A -= off + off.transpose(0, 2, 1)
        b = np.zeros((na, S, m))
        for sm, s_of, coords in ((u_s & ~v_s, su, pv), (v_s & ~u_s, sv, pu)):
            if not sm.any():
                continue
            idx = (pidx * S + s_of)[sm]
            cw = c[sm]
            pts = coords[sm]
            for dim in range(m):
                b[..., dim] += _scatter_rows(idx, cw * pts[:, dim], na * S).reshape(na, S)
        dead = A[:, sidx, sidx] <= 0.0
        A[:, sidx, sidx] = np.where(dead, 1.0, A[:, sidx, sidx])
        b = np.where(dead[..., None], Xa[:, T:], b)

        new_s = np.linalg.solve(A, b)
        old_s = Xa[:, T:]
        tight = np.where(act, d, np.inf).min(axis=1) < _COLLAPSE_GUARD
        new_s = np.where(tight[:, None, None], 0.5 * (new_s + old_s), new_s)
        step_vec = new_s - old_s
        delta = np.linalg.norm(step_vec, axis=2).max(axis=1)
        snorm = np.sqrt((step_vec**2).sum(axis=(1, 2)))
        if it % 4 == 0:
            # Geometric extrapolation of the linear tail, kept only where it
            # does not increase the cost, so descent is preserved.  The huge
            # rate ceiling matters: pairs collapsing harmonically show rates
            # of 1 - O(1/k), and each safeguarded jump then halves the
            # remaining distance.
            with np.errstate(invalid="ignore", divide="ignore"):
                rate = snorm / prev_snorm
                ok = np.isfinite(rate) & (rate > 0.05) & (rate < 0.99999) & (delta > tol)
                factor = np.where(ok, np.minimum(rate / np.maximum(1.0 - rate, 1e-12), 1e6), 0.0)
            if ok.any():
                cand = new_s + factor[:, None, None] * step_vec
                base = np.concatenate([Xa[:, :T], new_s], axis=1)
                alt = np.concatenate([Xa[:, :T], cand], axis=1)
                cost_plain = _metrics(base, repa, eua, eva, wa)[4]
                cost_cand = _metrics(alt, repa, eua, eva, wa)[4]
                use = ok & (cost_cand <= cost_plain)
                new_s = np.where(use[:, None, None], cand, new_s)
                snorm = np.where(use, np.nan, snorm)  # rate estimate resets
        prev_snorm = snorm
        delta_prev = delta
        Xa[:, T:] = new_s
        Xa[:, T:] = Xa[ara, repa[:, T:]]

    if final_idx.size:
        X[final_idx] = Xa
        rep[final_idx] = repa
        residual[final_idx] = delta_prev
        iters[final_idx] = it
    cost = _metrics(X, rep, eu, ev, w_alpha)[4]
    if history is not None and P == 1:
        history.append(float(cost[0]))
    return X, cost, residual, iters


# ---------------------------------------------------------------------------
# Reading a relaxed tree off as a TransportPath
# ---------------------------------------------------------------------------


def _build_path(
    origin: np.ndarray,
    target_locs: np.ndarray,
    positions: np.ndarray,
    oriented_edges,
    weights,
) -> TransportPath:
    """Contract sub-collapse edges and emit the oriented weighted tree.

    Terminal clusters keep their exact coordinates; an edge never merges
    two terminals.
    """
    n_term = 1 + target_locs.shape[0]
    n_vertices = positions.shape[0]
    parent = list(range(n_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    lengths = [
        float(np.linalg.norm(positions[u] - positions[v])) for u, v in oriented_edges
    ]
    for e, (u, v) in enumerate(oriented_edges):
        if lengths[e] >= COLLAPSE_TOL:
            continue
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        if ru < n_term and rv < n_term:
            continue  # keep genuinely distinct terminals apart
        if rv < n_term:
            ru, rv = rv, ru
        parent[rv] = ru  # terminal (or lower id) becomes the representative

    cluster_ids: dict[int, int] = {}
    coords: list[np.ndarray] = []

    def vertex_of(raw: int) -> int:
        root = find(raw)
        if root not in cluster_ids:
            cluster_ids[root] = len(coords)
            if root == 0:
                coords.append(np.asarray(origin, dtype=float))
            elif root < n_term:
                coords.append(target_locs[root - 1])
            else:
                coords.append(positions[root])
        return cluster_ids[root]

    vertex_of(0)
    for t in range(1, n_term):
        vertex_of(t)
    out_edges = []
    for e, (u, v) in enumerate(oriented_edges):
        cu, cv = vertex_of(u), vertex_of(v)
        if cu == cv:
            continue
        out_edges.append((cu, cv, float(weights[e])))
    vertices = np.array(coords, dtype=float) if coords else np.asarray(origin).reshape(1, -1)
    return TransportPath(vertices, tuple(out_edges))


# ---------------------------------------------------------------------------
# Reports and exact solving
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one single-source solve."""

    path: TransportPath
    cost: float
    exact: bool
    iterations: int
    residual: float


def _split_coincident(origin: np.ndarray, targets: AtomicMeasure):
    d = np.linalg.norm(targets.locations - origin, axis=1)
    away = d > COINCIDENT_TOL
    return targets.locations[away], targets.masses[away], int(np.sum(~away))


def solve_exact_batch(problems, alpha: float, tol: float = POSITION_TOL):
    """Exact solves for problems sharing one target count.

    ``problems`` is a sequence of (origin (m,), locations (n, m),
    masses (n,)) triples with a common n >= 1.  Returns a list of
    SolveReport in input order.  All full topologies are relaxed in one
    vectorized batch, then the by-cost winner (ties broken by canonical
    encoding) is read off per problem.
    """
    n = problems[0][1].shape[0]
    m_dim = problems[0][1].shape[1]
    table = _topology_table(n)
    reports: list[SolveReport] = []
    chunk = max(1, _MAX_BATCH_PAIRS // table.count)
    for start in range(0, len(problems), chunk):
        batch = problems[start : start + chunk]
        B = len(batch)
        T_count = table.count
        P = B * T_count
        term = np.zeros((P, n + 1, m_dim))
        w_raw = np.zeros((P, table.n_edges))
        for bi, (origin, locs, masses) in enumerate(batch):
            sl = slice(bi * T_count, (bi + 1) * T_count)
            term[sl, 0] = origin
            term[sl, 1:] = locs
            w_raw[sl] = _subset_sums(masses)[table.below_mask]
        edges = np.tile(table.edges, (B, 1, 1))
        w_alpha = np.power(w_raw, alpha) if alpha > 0.0 else np.ones_like(w_raw)
        # Loose pass over every topology, then full-tolerance refinement of
        # the per-problem shortlist (warm-started from the loose positions).
        # The loose stop leaves far less slack than the shortlist margin, so
        # the true winner is always refined.
        X1, cost1, _, _ = _relax_core(
            term, edges, w_alpha, table.n_steiner,
            tol=1e-5, max_iters=250, stall_window=6, stall_tol=1e-8,
        )
        short_rows = []
        short_owner = []
        for bi in range(B):
            sl = slice(bi * T_count, (bi + 1) * T_count)
            best = float(cost1[sl].min())
            rows = bi * T_count + np.nonzero(
                cost1[sl] <= best + _SHORTLIST_MARGIN * (1.0 + abs(best))
            )[0]
            short_rows.append(rows)
            short_owner.extend([bi] * rows.size)
        rows = np.concatenate(short_rows)
        X2, cost2, residual2, iters2 = _relax_core(
            term[rows], edges[rows], w_alpha[rows], table.n_steiner,
            tol=tol, max_iters=3000,
            init_steiner=X1[rows][:, n + 1 :],
        )
        owner = np.asarray(short_owner)
        for bi, (origin, locs, masses) in enumerate(batch):
            mine = np.nonzero(owner == bi)[0]
            costs_b = cost2[mine]
            best = float(costs_b.min())
            tied = mine[np.nonzero(costs_b <= best + COLLAPSE_TOL)[0]]
            winner_row = int(min(tied, key=lambda r: table.encodings[rows[r] % T_count]))
            t_id = rows[winner_row] % T_count
            path = _build_path(
                origin,
                locs,
                X2[winner_row],
                [tuple(e) for e in table.edges[t_id]],
                w_raw[rows[winner_row]],
            )
            reports.append(
                SolveReport(
                    path=path,
                    cost=m_alpha_cost(path, alpha),
                    exact=True,
                    iterations=int(iters2[winner_row]),
                    residual=float(residual2[winner_row])
                    if np.isfinite(residual2[winner_row])
                    else 0.0,
                )
            )
    return reports


# ---------------------------------------------------------------------------
# Heuristic mode
# ---------------------------------------------------------------------------


def _fermat_point(anchors: np.ndarray, weights: np.ndarray, iters: int = 60) -> np.ndarray:
    x = (anchors * weights[:, None]).sum(axis=0) / weights.sum()
    for _ in range(iters):
        d = np.maximum(np.linalg.norm(anchors - x, axis=1), _DIST_FLOOR)
        c = weights / d
        x_new = (anchors * c[:, None]).sum(axis=0) / c.sum()
        if np.linalg.norm(x_new - x) < 1e-12:
            return x_new
        x = x_new
    return x


def _greedy_merge_topology(origin, locs, masses, alpha):
    """Agglomerative topology: repeatedly merge the pair saving the most
    star cost, bifurcating at the local three-point optimum."""
    n = locs.shape[0]
    nodes = [
        {"vid": t + 1, "pos": locs[t], "mass": float(masses[t])} for t in range(n)
    ]
    next_vid = n + 1
    edges: list[tuple[int, int]] = []
    positions: dict[int, np.ndarray] = {}

    def merge_gain(a, b):
        wa = a["mass"] ** alpha if alpha > 0 else 1.0
        wb = b["mass"] ** alpha if alpha > 0 else 1.0
        wt = (a["mass"] + b["mass"]) ** alpha if alpha > 0 else 1.0
        anchors = np.array([origin, a["pos"], b["pos"]])
        bif = _fermat_point(anchors, np.array([wt, wa, wb]))
        old = wa * np.linalg.norm(origin - a["pos"]) + wb * np.linalg.norm(
            origin - b["pos"]
        )
        new = (
            wt * np.linalg.norm(origin - bif)
            + wa * np.linalg.norm(bif - a["pos"])
            + wb * np.linalg.norm(bif - b["pos"])
        )
        return old - new, bif

    while len(nodes) > 1:
        best = None
        for ia, ib in itertools.combinations(range(len(nodes)), 2):
            gain, bif = merge_gain(nodes[ia], nodes[ib])
            if best is None or gain > best[0] + 1e-15:
                best = (gain, ia, ib, bif)
        if best is None or best[0] <= 0.0:
            break
        _, ia, ib, bif = best
        a, b = nodes[ia], nodes[ib]
        edges.append((next_vid, a["vid"]))
        edges.append((next_vid, b["vid"]))
        positions[next_vid] = bif
        merged = {"vid": next_vid, "pos": bif, "mass": a["mass"] + b["mass"]}
        nodes = [nd for idx, nd in enumerate(nodes) if idx not in (ia, ib)]
        nodes.append(merged)
        next_vid += 1
    for nd in nodes:
        edges.append((0, nd["vid"]))
    return tuple(edges), positions


def _relax_one(origin, locs, masses, alpha, edges, n, tol=POSITION_TOL,
               max_iters=MAX_ITERS, stall_window=_STALL_WINDOW,
               stall_tol=_STALL_TOL, history=None):
    """Relax one arbitrary tree topology; returns geometry and cost pieces."""
    oriented, below = _root_topology(n, edges)
    w_raw = np.array(
        [sum(masses[t - 1] for t in bset) for _, bset in zip(oriented, below)]
    )
    w_alpha = np.power(w_raw, alpha) if alpha > 0.0 else np.ones_like(w_raw)
    used = {v for e in edges for v in e} | {0}
    n_steiner = max(used) - n if used else 0
    n_steiner = max(0, n_steiner)
    edge_arr = np.array(oriented, dtype=np.int32).reshape(1, -1, 2)
    term = np.zeros((1, n + 1, locs.shape[1]))
    term[0, 0] = origin
    term[0, 1:] = locs
    X, cost, residual, iters = _relax_core(
        term,
        edge_arr,
        w_alpha.reshape(1, -1),
        n_steiner,
        tol=tol,
        max_iters=max_iters,
        stall_window=stall_window,
        stall_tol=stall_tol,
        history=history,
    )
    return X[0], float(cost[0]), float(residual[0]), int(iters[0]), oriented, w_raw


#: Improvement rounds allowed in heuristic local search.
_LOCAL_SEARCH_CAP = 200


def _solve_heuristic(origin, locs, masses, alpha, tol=POSITION_TOL) -> SolveReport:
    n = locs.shape[0]
    loose = dict(tol=1e-7, max_iters=600, stall_window=8, stall_tol=1e-11)
    edges, _ = _greedy_merge_topology(origin, locs, masses, alpha)
    X, cost, residual, iters, oriented, w_raw = _relax_one(
        origin, locs, masses, alpha, edges, n, **loose
    )
    # Leaf-swap local search: exchange two targets' slots in the topology.
    rounds = 0
    improved = True
    while improved and rounds < _LOCAL_SEARCH_CAP:
        improved = False
        rounds += 1
        for a, b in itertools.combinations(range(1, n + 1), 2):
            swapped = tuple(
                (b if u == a else a if u == b else u, b if v == a else a if v == b else v)
                for u, v in edges
            )
            Xs, cs, rs, its, ors, wrs = _relax_one(
                origin, locs, masses, alpha, swapped, n, **loose
            )
            if cs < cost - 1e-9:
                edges, X, cost, residual, iters = swapped, Xs, cs, rs, its
                oriented, w_raw = ors, wrs
                improved = True
                break
    # Full-tolerance polish of the surviving topology.
    X, cost, residual, iters, oriented, w_raw = _relax_one(
        origin, locs, masses, alpha, edges, n, tol=tol
    )
    path = _build_path(origin, locs, X, oriented, w_raw)
    return SolveReport(
        path=path,
        cost=m_alpha_cost(path, alpha),
        exact=False,
        iterations=iters,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def solve_single_source(
    origin,
    targets: AtomicMeasure,
    alpha: float,
    exact_threshold: int = 7,
) -> SolveReport:
    """Optimal (or locally searched) shipping tree from one origin.

    Target counts up to ``exact_threshold`` are solved by full topology
    enumeration and the report is flagged exact; beyond that a greedy
    agglomeration with leaf-swap local search runs instead.  Edge weights
    are downstream demand sums, so the balance equation holds by
    construction.
    """
    if not (0.0 <= alpha <= 1.0):
        raise Unsupported(f"alpha must lie in [0, 1], got {alpha}")
    origin = np.asarray(origin, dtype=float).reshape(-1)
    if origin.shape[0] != targets.dimension:
        raise InvalidPair("origin dimension does not match targets")
    locs, masses, dropped = _split_coincident(origin, targets)
    n = locs.shape[0]
    if n == 0:
        path = TransportPath(origin.reshape(1, -1), ())
        return SolveReport(path=path, cost=0.0, exact=True, iterations=0, residual=0.0)
    if n <= min(exact_threshold, HARD_EXACT_LIMIT):
        return solve_exact_batch([(origin, locs, masses)], alpha)[0]
    return _solve_heuristic(origin, locs, masses, alpha)


def relax_topology(
    topology: Topology,
    points: np.ndarray,
    masses: np.ndarray,
    alpha: float,
    tol: float = POSITION_TOL,
    max_iters: int = MAX_ITERS,
    return_history: bool = False,
):
    """Minimize the fixed-topology cost over Steiner positions.

    ``points`` holds the origin at row 0 followed by the n target rows.
    Returns (positions, cost) over all topology vertices; edges that have
    shrunk below the collapse tolerance are excluded from the re-evaluated
    cost.  Raises ConvergenceFailure (carrying the best iterate) if the
    position updates have not reached ``tol`` after ``max_iters``
    iterations and the cost had not stalled either.
    """
    points = np.asarray(points, dtype=float)
    masses = np.asarray(masses, dtype=float).reshape(-1)
    n = topology.n_targets
    if points.shape[0] != n + 1 or masses.shape[0] != n:
        raise InvalidPair("points must hold origin plus n targets; masses length n")
    history: list | None = [] if return_history else None
    X, cost, residual, iters, oriented, w_raw = _relax_one(
        points[0], points[1:], masses, alpha, topology.edges, n,
        tol=tol, max_iters=max_iters, history=history,
    )
    if iters >= max_iters and residual > tol:
        raise ConvergenceFailure(
            f"relaxation residual {residual:.3e} above tol {tol:.3e} "
            f"after {max_iters} iterations",
            positions=X,
            cost=cost,
            residual=residual,
        )
    if return_history:
        return X, cost, history
    return X, cost


def d_alpha_between(
    a: AtomicMeasure,
    b: AtomicMeasure,
    alpha: float,
    exact_threshold: int = 7,
) -> float:
    """Minimum shipping cost between equal-mass atomic measures.

    Single-atom sides are solved exactly (the cost is symmetric, so either
    side may be the origin).  Two multi-atom measures are supported only
    through assignment-style splitting: every way of assigning b's atoms to
    a's atoms whose per-atom mass sums match a's masses is evaluated and
    the best sum of single-source solves is returned.  That covers the
    oracle-style uses here; mismatched multi-atom pairs raise Unsupported.
    """
    if abs(mass(a) - mass(b)) > 1e-9:
        raise InvalidPair(f"measures must have equal mass ({mass(a)} vs {mass(b)})")
    if a.num_atoms == 1:
        return solve_single_source(a.locations[0], b, alpha, exact_threshold).cost
    if b.num_atoms == 1:
        return solve_single_source(b.locations[0], a, alpha, exact_threshold).cost
    k, ell = a.num_atoms, b.num_atoms
    if k**ell > 10**6:
        raise Refused(f"{k}^{ell} atom assignments exceed the enumeration budget")
    best = None
    for assign in itertools.product(range(k), repeat=ell):
        sums = np.zeros(k)
        for j, i in enumerate(assign):
            sums[i] += b.masses[j]
        if np.any(np.abs(sums - a.masses) > 1e-9):
            continue
        total = 0.0
        for i in range(k):
            idx = [j for j, t in enumerate(assign) if t == i]
            if not idx:
                continue
            group = AtomicMeasure(b.locations[idx], b.masses[idx])
            total += solve_single_source(a.locations[i], group, alpha, exact_threshold).cost
        best = total if best is None else min(best, total)
    if best is None:
        raise Unsupported(
            "no atom assignment matches the source masses; general multi-source "
            "shipping trees are out of scope"
        )
    return float(best)
