"""Transport paths as weighted digraphs, plans, and their coupling.

A transport path is a cycle-free weighted directed graph whose vertex
balance encodes shipping from source atoms to sink atoms.  Points on a
path are addressed combinatorially (vertex index, or edge index plus a
parameter) rather than by raw coordinates, since theta lives on the graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    InfeasiblePerturbation,
    InvalidPair,
    MalformedPath,
    NotSingleSource,
    Unsupported,
)
from .measures import AtomicMeasure, Instance

#: Absolute tolerance for balance, margin and weight-reconstruction checks.
BALANCE_TOL = 1e-9

#: Weights below this are treated as absent when alpha = 0 (0^0 -> 0 here;
#: transport paths never carry zero-weight edges, so this only matters for
#: perturbed quantities inside increment computations).
ZERO_WEIGHT = 1e-12


def weight_power(w, alpha: float):
    """w**alpha with the alpha = 0 convention: 1 for positive w, 0 at w = 0."""
    w = np.asarray(w, dtype=float)
    if alpha == 0.0:
        out = (w > ZERO_WEIGHT).astype(float)
    else:
        out = np.power(np.maximum(w, 0.0), alpha)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TransportPath:
    """Weighted directed graph, cycle-free in the undirected sense.

    ``edges`` is a sequence of (tail index, head index, weight > 0).
    Directed parallel edges are merged by weight summation on construction;
    self-loops and zero-length edges are rejected.
    """

    vertices: np.ndarray  # (V, m)
    edges: tuple  # of (tail, head, weight)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        if vertices.ndim != 2:
            vertices = vertices.reshape(len(vertices), -1)
        nv = vertices.shape[0]
        merged: dict[tuple[int, int], float] = {}
        order: list[tuple[int, int]] = []
        for tail, head, w in self.edges:
            tail, head, w = int(tail), int(head), float(w)
            if not (0 <= tail < nv and 0 <= head < nv):
                raise MalformedPath(f"edge ({tail},{head}) references missing vertex")
            if tail == head:
                raise MalformedPath(f"self-loop at vertex {tail}")
            if w <= 0.0:
                raise MalformedPath(f"edge ({tail},{head}) has non-positive weight {w}")
            if np.linalg.norm(vertices[tail] - vertices[head]) <= 0.0:
                raise MalformedPath(
                    f"zero-length edge ({tail},{head}); collapse the endpoints instead"
                )
            key = (tail, head)
            if key in merged:
                merged[key] += w
            else:
                merged[key] = w
                order.append(key)
        edges = tuple((t, h, merged[(t, h)]) for t, h in order)
        _check_acyclic(nv, edges)
        vertices = vertices.copy()
        vertices.flags.writeable = False
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "edges", edges)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_length(self, e: int) -> float:
        tail, head, _ = self.edges[e]
        return float(np.linalg.norm(self.vertices[tail] - self.vertices[head]))

    def edge_lengths(self) -> np.ndarray:
        if not self.edges:
            return np.zeros(0)
        idx = np.array([(t, h) for t, h, _ in self.edges], dtype=int)
        return np.linalg.norm(self.vertices[idx[:, 0]] - self.vertices[idx[:, 1]], axis=1)

    def edge_weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.edges], dtype=float)

    def net_flows(self) -> np.ndarray:
        """Per-vertex outflow minus inflow."""
        net = np.zeros(self.num_vertices)
        for tail, head, w in self.edges:
            net[tail] += w
            net[head] -= w
        return net

    def connected_components(self) -> list[list[int]]:
        parent = list(range(self.num_vertices))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for tail, head, _ in self.edges:
            ra, rb = find(tail), find(head)
            if ra != rb:
                parent[ra] = rb
        groups: dict[int, list[int]] = {}
        for v in range(self.num_vertices):
            groups.setdefault(find(v), []).append(v)
        return list(groups.values())


def _check_acyclic(num_vertices: int, edges) -> None:
    parent = list(range(num_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for tail, head, _ in edges:
        ra, rb = find(tail), find(head)
        if ra == rb:
            raise MalformedPath("path contains an undirected cycle")
        parent[ra] = rb


@dataclass(frozen=True)
class PathPoint:
    """A point on a path: a vertex, or an interior point of an edge.

    ``t`` parametrizes the edge from tail (0) to head (1); the endpoints
    resolve to the corresponding vertices.
    """

    vertex: int | None = None
    edge: int | None = None
    t: float = 0.0

    def __post_init__(self):
        if (self.vertex is None) == (self.edge is None):
            raise ValueError("specify exactly one of vertex or edge")
        if self.edge is not None and not (0.0 <= self.t <= 1.0):
            raise ValueError("edge parameter t must lie in [0, 1]")

    @staticmethod
    def at_vertex(v: int) -> "PathPoint":
        return PathPoint(vertex=int(v))

    @staticmethod
    def on_edge(e: int, t: float) -> "PathPoint":
        return PathPoint(edge=int(e), t=float(t))


@dataclass(frozen=True)
class TransportPlan:
    """k-by-l nonnegative matrix of shipped quantities q_ij."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2:
            raise InvalidPair("plan entries must form a 2-d matrix")
        if np.any(entries < 0.0) or not np.all(np.isfinite(entries)):
            raise InvalidPair("plan entries must be finite and nonnegative")
        entries = entries.copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def row_sums(self) -> np.ndarray:
        """Per-factory loads m_i(q)."""
        return self.entries.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)


@dataclass(frozen=True)
class CurveMatrix:
    """Per (factory, household) directed curve along a path, or None."""

    curves: tuple  # k-tuple of l-tuples, entries: tuple of vertex ids or None

    def get(self, i: int, j: int):
        return self.curves[i][j]


# ---------------------------------------------------------------------------
# Basic operations
# ---------------------------------------------------------------------------


def m_alpha_cost(path: TransportPath, alpha: float) -> float:
    """Concave transport cost: sum of w(e)^alpha * length(e) over edges."""
    if not (0.0 <= alpha <= 1.0):
        raise Unsupported(f"alpha must lie in [0, 1], got {alpha}")
    if path.num_edges == 0:
        return 0.0
    return float(np.sum(weight_power(path.edge_weights(), alpha) * path.edge_lengths()))


def _match_atoms_to_vertices(path: TransportPath, measure: AtomicMeasure, tol: float):
    """Index of the path vertex at each atom location, or None if absent."""
    out = []
    for loc in measure.locations:
        d = np.linalg.norm(path.vertices - loc, axis=1)
        v = int(np.argmin(d)) if d.size else None
        out.append(v if v is not None and d[v] <= tol else None)
    return out


def check_balance(path: TransportPath, a: AtomicMeasure, b: AtomicMeasure) -> bool:
    """True iff every vertex satisfies the conservation equation for (a, b).

    Outflow minus inflow must equal +mass at source atoms, -mass at sink
    atoms, and 0 elsewhere, all within ``BALANCE_TOL``.
    """
    from .measures import mass as measure_mass

    if abs(measure_mass(a) - measure_mass(b)) > BALANCE_TOL:
        raise InvalidPair("source and sink measures must have equal mass")
    expected = np.zeros(path.num_vertices)
    for matches, masses, sign in (
        (_match_atoms_to_vertices(path, a, BALANCE_TOL), a.masses, +1.0),
        (_match_atoms_to_vertices(path, b, BALANCE_TOL), b.masses, -1.0),
    ):
        for v, w in zip(matches, masses):
            if v is None:
                return False  # an atom is not a vertex of the graph
            expected[v] += sign * w
    return bool(np.all(np.abs(path.net_flows() - expected) <= BALANCE_TOL))


def extract_curves(path: TransportPath, instance: Instance) -> CurveMatrix:
    """Unique directed factory-to-household curves; None where no route exists."""
    _check_acyclic(path.num_vertices, path.edges)  # defensive; construction enforces it
    fac = _match_atoms_to_vertices(
        path, AtomicMeasure(instance.factories, np.ones(instance.num_factories)), BALANCE_TOL
    )
    hh = _match_atoms_to_vertices(path, instance.household_measure(), BALANCE_TOL)
    adj: dict[int, list[tuple[int, bool]]] = {v: [] for v in range(path.num_vertices)}
    for e, (tail, head, _) in enumerate(path.edges):
        adj[tail].append((head, True))
        adj[head].append((tail, False))

    def directed_walk(u: int, v: int):
        # Unique undirected path in a forest; directed iff consistently oriented.
        if u == v:
            return (u,)
        prev: dict[int, tuple[int, bool]] = {u: (-1, True)}
        stack = [u]
        while stack:
            cur = stack.pop()
            if cur == v:
                break
            for nxt, fwd in adj[cur]:
                if nxt not in prev:
                    prev[nxt] = (cur, fwd)
                    stack.append(nxt)
        if v not in prev:
            return None
        walk = []
        cur = v
        while cur != u:
            back, fwd = prev[cur]
            if not fwd:
                return None
            walk.append(cur)
            cur = back
        walk.append(u)
        return tuple(reversed(walk))

    rows = []
    for i in range(instance.num_factories):
        row = []
        for j in range(instance.num_households):
            if fac[i] is None or hh[j] is None:
                row.append(None)
            else:
                row.append(directed_walk(fac[i], hh[j]))
        rows.append(tuple(row))
    return CurveMatrix(tuple(rows))


def plan_from_map(assignment: Sequence[int], instance: Instance) -> TransportPlan:
    """Map-form plan: household j's full demand goes to factory assignment[j]."""
    k, ell = instance.num_factories, instance.num_households
    entries = np.zeros((k, ell))
    for j, i in enumerate(assignment):
        if not 0 <= int(i) < k:
            raise InvalidPair(f"assignment[{j}] = {i} is not a factory index")
        entries[int(i), j] = instance.demands[j]
    return TransportPlan(entries)


def is_compatible(path: TransportPath, plan: TransportPlan, instance: Instance) -> bool:
    """Whether the plan is realizable on the path.

    Requires q_ij = 0 wherever no directed curve x_i -> y_j exists, and the
    superposition of q_ij units along each curve to reproduce every edge
    weight within ``BALANCE_TOL``.
    """
    k, ell = instance.num_factories, instance.num_households
    if plan.shape != (k, ell):
        raise InvalidPair(f"plan shape {plan.shape} does not match instance ({k}, {ell})")
    if np.any(np.abs(plan.column_sums() - instance.demands) > BALANCE_TOL):
        raise InvalidPair("plan column sums do not match household demands")
    source = AtomicMeasure(instance.factories, np.ones(k))
    fac = _match_atoms_to_vertices(path, source, BALANCE_TOL)
    hh = _match_atoms_to_vertices(path, instance.household_measure(), BALANCE_TOL)
    expected = np.zeros(path.num_vertices)
    rows = plan.row_sums()
    for i, v in enumerate(fac):
        if rows[i] > BALANCE_TOL and v is None:
            raise InvalidPair(f"factory {i} ships {rows[i]} but is not on the path")
        if v is not None:
            expected[v] += rows[i]
    for j, v in enumerate(hh):
        if v is None:
            raise InvalidPair(f"household {j} is not on the path")
        expected[v] -= instance.demands[j]
    if np.any(np.abs(path.net_flows() - expected) > BALANCE_TOL):
        raise InvalidPair("plan margins do not match the path's boundary")

    curves = extract_curves(path, instance)
    edge_index = {(t, h): e for e, (t, h, _) in enumerate(path.edges)}
    recon = np.zeros(max(path.num_edges, 1))
    for i in range(k):
        for j in range(ell):
            q = plan.entries[i, j]
            if q <= ZERO_WEIGHT:
                continue
            curve = curves.get(i, j)
            if curve is None:
                return False
            for u, v in zip(curve[:-1], curve[1:]):
                recon[edge_index[(u, v)]] += q
    weights = path.edge_weights() if path.num_edges else np.zeros(1)
    return bool(np.all(np.abs(recon[: path.num_edges] - weights[: path.num_edges]) <= BALANCE_TOL))


def union_paths(paths: Sequence[TransportPath]) -> TransportPath:
    """Disjoint union: concatenates vertex sets and reindexes edges."""
    dims = {p.vertices.shape[1] for p in paths if p.num_vertices}
    if len(dims) > 1:
        raise InvalidPair("cannot union paths of different dimensions")
    dim = dims.pop() if dims else 1
    verts: list[np.ndarray] = []
    edges: list[tuple[int, int, float]] = []
    offset = 0
    for p in paths:
        if p.num_vertices == 0:
            continue
        verts.append(p.vertices)
        edges.extend((t + offset, h + offset, w) for t, h, w in p.edges)
        offset += p.num_vertices
    vertices = np.vstack(verts) if verts else np.zeros((0, dim))
    return TransportPath(vertices, tuple(edges))


# ---------------------------------------------------------------------------
# Single-source structure: flow density and marginal quantities
# ---------------------------------------------------------------------------


class _SourceTree:
    """Rooted view of a single-source path: parent edges and curve lookups."""

    def __init__(self, path: TransportPath):
        self.path = path
        net = path.net_flows()
        sources = np.nonzero(net > BALANCE_TOL)[0]
        if len(sources) != 1:
            raise NotSingleSource(
                f"expected exactly one net-outflow vertex, found {len(sources)}"
            )
        self.source = int(sources[0])
        self.total_mass = float(net[self.source])
        self.parent_edge = [-1] * path.num_vertices  # edge whose head is v
        incoming_sum = np.zeros(path.num_vertices)
        for e, (tail, head, w) in enumerate(path.edges):
            incoming_sum[head] += w
            if self.parent_edge[head] != -1:
                raise NotSingleSource(f"vertex {head} has two incoming edges")
            self.parent_edge[head] = e
        if self.parent_edge[self.source] != -1:
            raise NotSingleSource("the source vertex has an incoming edge")
        self.incoming_sum = incoming_sum

    def theta(self, p: PathPoint) -> float:
        """Mass flowing through p (edge weight, source mass, or incoming sum)."""
        p = self._resolve(p)
        if p.edge is not None:
            return float(self.path.edges[p.edge][2])
        if p.vertex == self.source:
            return self.total_mass
        return float(self.incoming_sum[p.vertex])

    def _resolve(self, p: PathPoint) -> PathPoint:
        if p.edge is not None and p.t <= 0.0:
            return PathPoint.at_vertex(self.path.edges[p.edge][0])
        if p.edge is not None and p.t >= 1.0:
            return PathPoint.at_vertex(self.path.edges[p.edge][1])
        return p

    def curve_segments(self, p: PathPoint) -> list[tuple[float, float]]:
        """(weight, length) pieces of the unique source-to-p curve."""
        p = self._resolve(p)
        segments: list[tuple[float, float]] = []
        if p.edge is not None:
            tail, _, w = self.path.edges[p.edge]
            segments.append((w, p.t * self.path.edge_length(p.edge)))
            v = tail
        else:
            v = p.vertex
        while v != self.source:
            e = self.parent_edge[v]
            if e == -1:
                raise NotSingleSource(f"vertex {v} is not reachable from the source")
            tail, _, w = self.path.edges[e]
            segments.append((w, self.path.edge_length(e)))
            v = tail
        return segments


def flow_density(path: TransportPath, source_vertex: int, p: PathPoint) -> float:
    """Mass flowing through p on a single-source path."""
    tree = _SourceTree(path)
    if tree.source != int(source_vertex):
        raise NotSingleSource(
            f"declared source {source_vertex} but net outflow sits at {tree.source}"
        )
    return tree.theta(p)


def increment_cost(path: TransportPath, p: PathPoint, delta_m: float, alpha: float) -> float:
    """Exact transport-cost change when the mass through p shifts by delta_m.

    Evaluates the finite edge sum of (theta + delta_m)^alpha - theta^alpha
    along the unique source-to-p curve.
    """
    tree = _SourceTree(path)
    theta_p = tree.theta(p)
    if delta_m < -theta_p - 1e-12:
        raise InfeasiblePerturbation(
            f"delta_m = {delta_m} below -theta(p) = {-theta_p}"
        )
    total = 0.0
    for w, length in tree.curve_segments(p):
        total += (weight_power(w + delta_m, alpha) - weight_power(w, alpha)) * length
    return float(total)


def marginal_cost(path: TransportPath, p: PathPoint, alpha: float) -> float:
    """Derivative of increment_cost in delta_m at 0: alpha * integral theta^(alpha-1)."""
    if alpha == 0.0:
        raise Unsupported("marginal cost degenerates at alpha = 0; use increment_cost")
    tree = _SourceTree(path)
    total = 0.0
    for w, length in tree.curve_segments(p):
        total += alpha * w ** (alpha - 1.0) * length
    return float(total)
