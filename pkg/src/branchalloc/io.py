"""File formats and figure output.

Instances and results travel as JSON; Python's shortest-round-trip float
repr guarantees numeric fields survive a parse/emit cycle bit for bit.
Results embed an echo of the instance so rendering and validation work
from the result file alone.  Figures are written as standalone SVG with
edge stroke width encoding shipped quantity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .criteria import closeness_ball, rho
from .errors import DomainError, InvalidInstance
from .graph import TransportPath, weight_power
from .measures import Instance
from .solver import AllocationResult
from .state import StateMatrix

_INSTANCE_KEYS = {"alpha", "dimension", "factories", "households"}
_HOUSEHOLD_KEYS = {"position", "demand"}


def instance_to_dict(instance: Instance) -> dict:
    return {
        "alpha": instance.alpha,
        "dimension": instance.dimension,
        "factories": [list(map(float, row)) for row in instance.factories],
        "households": [
            {"position": list(map(float, row)), "demand": float(d)}
            for row, d in zip(instance.households, instance.demands)
        ],
    }


def instance_from_dict(data: dict) -> Instance:
    if not isinstance(data, dict):
        raise InvalidInstance("instance document must be a JSON object")
    unknown = set(data) - _INSTANCE_KEYS
    if unknown:
        raise InvalidInstance(f"unknown instance keys: {sorted(unknown)}")
    missing = _INSTANCE_KEYS - set(data)
    if missing:
        raise InvalidInstance(f"missing instance keys: {sorted(missing)}")
    households = data["households"]
    if not isinstance(households, list) or not households:
        raise InvalidInstance("households must be a non-empty list")
    positions = []
    demands = []
    for idx, row in enumerate(households):
        if not isinstance(row, dict):
            raise InvalidInstance(f"household {idx} must be an object")
        bad = set(row) - _HOUSEHOLD_KEYS
        if bad:
            raise InvalidInstance(f"household {idx} has unknown keys {sorted(bad)}")
        if _HOUSEHOLD_KEYS - set(row):
            raise InvalidInstance(f"household {idx} needs position and demand")
        positions.append(row["position"])
        demands.append(row["demand"])
    instance = Instance(
        alpha=data["alpha"],
        factories=data["factories"],
        households=positions,
        demands=demands,
    )
    if instance.dimension != int(data["dimension"]):
        raise InvalidInstance(
            f"declared dimension {data['dimension']} does not match "
            f"coordinates of dimension {instance.dimension}"
        )
    return instance


def load_instance(path: str) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2)
        fh.write("\n")


def path_to_dict(path: TransportPath) -> dict:
    return {
        "vertices": [list(map(float, row)) for row in path.vertices],
        "edges": [
            {"tail": t + 1, "head": h + 1, "weight": float(w)}
            for t, h, w in path.edges
        ],
    }


def path_from_dict(data: dict) -> TransportPath:
    vertices = np.asarray(data["vertices"], dtype=float)
    if vertices.size == 0:
        vertices = vertices.reshape(0, 2)
    edges = tuple(
        (e["tail"] - 1, e["head"] - 1, e["weight"]) for e in data["edges"]
    )
    return TransportPath(vertices, edges)


def result_to_dict(
    result: AllocationResult,
    instance: Instance,
    solver_options: dict | None = None,
) -> dict:
    meta = {
        "alpha": instance.alpha,
        "fixpoint_iterations": result.fixpoint_iterations,
        "candidates_evaluated": result.candidates_evaluated,
        "pruned": result.pruned,
        "instance": instance_to_dict(instance),
    }
    meta.update(solver_options or {})
    return {
        "assignment": [i + 1 for i in result.assignment],
        "cost": float(result.cost),
        "loads": [float(x) for x in result.loads],
        "path": path_to_dict(result.path),
        "state_matrix": result.state_matrix.row_strings(),
        "exactness": {
            "mode": result.mode,
            "inner_exact": result.inner_exact,
            "enumeration_complete": result.enumeration_complete,
        },
        "metadata": meta,
    }


@dataclass(frozen=True)
class LoadedResult:
    """A result file read back: the instance echo plus solved artifacts."""

    instance: Instance
    assignment: tuple
    cost: float
    loads: np.ndarray
    path: TransportPath
    state_matrix: StateMatrix
    exactness: dict
    metadata: dict
    raw: dict


def result_from_dict(data: dict) -> LoadedResult:
    instance = instance_from_dict(data["metadata"]["instance"])
    rows = [[int(ch) for ch in row] for row in data["state_matrix"]]
    return LoadedResult(
        instance=instance,
        assignment=tuple(i - 1 for i in data["assignment"]),
        cost=float(data["cost"]),
        loads=np.asarray(data["loads"], dtype=float),
        path=path_from_dict(data["path"]),
        state_matrix=StateMatrix(np.asarray(rows)),
        exactness=dict(data["exactness"]),
        metadata=dict(data["metadata"]),
        raw=data,
    )


def save_result(data: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_result(path: str) -> LoadedResult:
    with open(path, "r", encoding="utf-8") as fh:
        return result_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

#: Edge stroke width in pixels is 4 w^alpha, floored here.
STROKE_FLOOR = 0.5
STROKE_SCALE = 4.0

_CANVAS = 800.0
_MARGIN = 60.0


class _Canvas:
    def __init__(self, points: np.ndarray):
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        scale = (_CANVAS - 2 * _MARGIN) / float(span.max())
        self.lo = lo
        self.scale = scale
        self.height = 2 * _MARGIN + span[1] * scale

    def map(self, p) -> tuple[float, float]:
        x = _MARGIN + (p[0] - self.lo[0]) * self.scale
        y = self.height - (_MARGIN + (p[1] - self.lo[1]) * self.scale)
        return float(x), float(y)


def render_svg(
    loaded: LoadedResult,
    out_path: str,
    regions: tuple[int, float] | None = None,
) -> None:
    """Draw the allocation: square factories, demand-scaled household dots,
    edges with stroke width 4 w^alpha px (floor 0.5), and optionally the
    always/never-assign disks of one factory at one demand level."""
    instance = loaded.instance
    if instance.dimension != 2:
        raise DomainError("rendering supports two-dimensional instances only")
    pts = [instance.factories, instance.households]
    if loaded.path.num_vertices:
        pts.append(loaded.path.vertices)
    all_pts = np.vstack(pts)
    canvas = _Canvas(all_pts)
    parts = []
    width = _CANVAS
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{canvas.height:.0f}" viewBox="0 0 {width:.0f} {canvas.height:.0f}">'
    )
    parts.append('<rect width="100%" height="100%" fill="white"/>')

    if regions is not None:
        s, level = regions
        parts.extend(_region_disks(instance, s, level, canvas))

    alpha = instance.alpha
    for tail, head, w in loaded.path.edges:
        x1, y1 = canvas.map(loaded.path.vertices[tail])
        x2, y2 = canvas.map(loaded.path.vertices[head])
        stroke = max(STROKE_FLOOR, STROKE_SCALE * float(weight_power(w, alpha)))
        parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="#1a4d8f" stroke-width="{stroke:.3f}" stroke-linecap="round"/>'
        )
    max_demand = float(instance.demands.max())
    for pos, demand in zip(instance.households, instance.demands):
        x, y = canvas.map(pos)
        r = 3.0 + 9.0 * float(np.sqrt(demand / max_demand))
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" '
            f'fill="#d97706" fill-opacity="0.85"/>'
        )
    side = 14.0
    for pos in instance.factories:
        x, y = canvas.map(pos)
        parts.append(
            f'<rect x="{x - side / 2:.2f}" y="{y - side / 2:.2f}" width="{side}" '
            f'height="{side}" fill="#15803d" stroke="#052e16" stroke-width="1.5"/>'
        )
    parts.append("</svg>")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


def _region_disks(instance: Instance, s: int, level: float, canvas: _Canvas):
    """Translucent disks of the always-assign (intersection) and
    never-assign (union) regions of factory s at demand ``level``."""
    out = []
    try:
        w = rho(instance.alpha, 1.0, level)
    except DomainError:
        return out
    if not (0.0 < w < 1.0):
        return out  # degenerate ratio: the region is a half plane, not a disk
    for i in range(instance.num_factories):
        if i == s:
            continue
        close = closeness_ball(instance.factories[s], instance.factories[i], w)
        far = closeness_ball(instance.factories[i], instance.factories[s], w)
        for ball, color in ((close, "#16a34a"), (far, "#dc2626")):
            cx, cy = canvas.map(ball.center)
            out.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" '
                f'r="{ball.radius * canvas.scale:.2f}" fill="{color}" '
                f'fill-opacity="0.12" stroke="{color}" stroke-width="0.8" '
                f'stroke-opacity="0.5"/>'
            )
    return out
