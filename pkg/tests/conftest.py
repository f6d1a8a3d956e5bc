"""Shared helpers: random instances, random single-source trees, oracles."""

from __future__ import annotations

import numpy as np
import pytest

from branchalloc.graph import TransportPath
from branchalloc.measures import AtomicMeasure, Instance, normalize


def random_instance(rng, k, ell, alpha, box=4.0, min_demand=0.2):
    """Random normalized instance in a box; demands bounded away from zero."""
    return normalize(
        Instance(
            alpha=alpha,
            factories=rng.uniform(0.0, box, (k, 2)),
            households=rng.uniform(0.0, box, (ell, 2)),
            demands=rng.uniform(min_demand, 1.0, ell),
        )
    )


def random_measure(rng, n, box=4.0, total=None):
    masses = rng.uniform(0.2, 1.0, n)
    if total is not None:
        masses = masses / masses.sum() * total
    return AtomicMeasure(rng.uniform(0.0, box, (n, 2)), masses)


def random_source_tree(rng, n_leaves=5, box=3.0, min_mass=0.05):
    """A random balanced single-source shipping tree built directly.

    Grows a random tree outward from the source, attaches a positive mass
    at every leaf, then sets each edge weight to its downstream mass sum,
    which satisfies the balance equation by construction.  Returns
    (path, source_index, sink_measure).
    """
    positions = [rng.uniform(-box, box, 2)]
    parent = [-1]
    for v in range(1, n_leaves + int(rng.integers(0, n_leaves))):
        parent.append(int(rng.integers(0, v)))
        positions.append(positions[parent[v]] + rng.uniform(-1.5, 1.5, 2))
    n_vertices = len(positions)
    children = [[] for _ in range(n_vertices)]
    for v in range(1, n_vertices):
        children[parent[v]].append(v)
    leaf_mass = {}
    for v in range(n_vertices):
        if not children[v] or (v != 0 and rng.random() < 0.3):
            leaf_mass[v] = float(rng.uniform(min_mass, 0.6))
    subtree = [0.0] * n_vertices
    for v in reversed(range(n_vertices)):
        subtree[v] = leaf_mass.get(v, 0.0) + sum(subtree[c] for c in children[v])
    edges = tuple(
        (parent[v], v, subtree[v]) for v in range(1, n_vertices) if subtree[v] > 0
    )
    keep = {0} | {v for e in edges for v in e[:2]}
    # Re-index, dropping massless dangling branches.
    remap = {v: i for i, v in enumerate(sorted(keep))}
    path = TransportPath(
        np.array([positions[v] for v in sorted(keep)]),
        tuple((remap[t], remap[h], w) for t, h, w in edges),
    )
    sink_locs = [positions[v] for v in sorted(leaf_mass) if v in keep]
    sink_masses = [leaf_mass[v] for v in sorted(leaf_mass) if v in keep]
    sinks = AtomicMeasure(np.array(sink_locs), np.array(sink_masses))
    return path, remap[0], sinks


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
