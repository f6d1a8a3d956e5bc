"""Geometry and measure primitives: weighted point sets and problem instances.

Points are plain float arrays of shape (m,).  Measures and instances are
immutable after construction (arrays are frozen), so they can be shared
freely between workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInstance

#: Tolerance for the "demands sum to one" check.
NORMALIZATION_TOL = 1e-12


def _as_points(data, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInstance(f"{name} must be a non-empty (n, m) coordinate array")
    if not np.all(np.isfinite(arr)):
        raise InvalidInstance(f"{name} contains non-finite coordinates")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _check_distinct(points: np.ndarray, name: str) -> None:
    seen = set()
    for row in points:
        key = tuple(row.tolist())
        if key in seen:
            raise InvalidInstance(f"{name} contains duplicate locations: {key}")
        seen.add(key)


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite weighted point set: sum of Dirac masses at distinct locations."""

    locations: np.ndarray  # (n, m)
    masses: np.ndarray  # (n,), strictly positive

    def __post_init__(self):
        locations = _as_points(self.locations, "locations")
        masses = np.asarray(self.masses, dtype=float).reshape(-1).copy()
        if masses.shape[0] != locations.shape[0]:
            raise InvalidInstance("locations and masses must have equal length")
        if not np.all(np.isfinite(masses)) or np.any(masses <= 0.0):
            raise InvalidInstance("all masses must be strictly positive and finite")
        _check_distinct(locations, "measure atoms")
        masses.flags.writeable = False
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "masses", masses)

    @property
    def num_atoms(self) -> int:
        return self.locations.shape[0]

    @property
    def dimension(self) -> int:
        return self.locations.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return (
            self.locations.shape == other.locations.shape
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.masses, other.masses)
        )


def mass(measure: AtomicMeasure) -> float:
    """Total mass of a measure (sum of its atom masses)."""
    return float(np.sum(measure.masses))


@dataclass(frozen=True)
class Instance:
    """Allocation problem data: factory sites, household demands, concavity alpha.

    Demands need not sum to one on construction; solving requires a
    normalized instance (see :func:`normalize` and :attr:`is_normalized`).
    Duplicate household locations are merged by summing their demands, with
    a warning, because coincident Dirac atoms are the same atom.
    """

    alpha: float
    factories: np.ndarray  # (k, m)
    households: np.ndarray  # (l, m)
    demands: np.ndarray  # (l,), strictly positive

    def __post_init__(self):
        alpha = float(self.alpha)
        if not (0.0 <= alpha < 1.0):
            raise InvalidInstance(f"alpha must lie in [0, 1), got {alpha}")
        factories = _as_points(self.factories, "factories")
        households = _as_points(self.households, "households")
        demands = np.asarray(self.demands, dtype=float).reshape(-1).copy()
        if demands.shape[0] != households.shape[0]:
            raise InvalidInstance("households and demands must have equal length")
        if not np.all(np.isfinite(demands)) or np.any(demands <= 0.0):
            raise InvalidInstance("all demands must be strictly positive and finite")
        if factories.shape[1] != households.shape[1]:
            raise InvalidInstance("factories and households must share one dimension")
        _check_distinct(factories, "factories")
        households, demands = _merge_duplicate_households(households, demands)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "factories", factories)
        object.__setattr__(self, "households", households)
        object.__setattr__(self, "demands", demands)

    @property
    def num_factories(self) -> int:
        return self.factories.shape[0]

    @property
    def num_households(self) -> int:
        return self.households.shape[0]

    @property
    def dimension(self) -> int:
        return self.factories.shape[1]

    @property
    def is_normalized(self) -> bool:
        return abs(float(np.sum(self.demands)) - 1.0) <= NORMALIZATION_TOL

    def household_measure(self) -> AtomicMeasure:
        return AtomicMeasure(self.households, self.demands)

    def require_normalized(self) -> None:
        if not self.is_normalized:
            raise InvalidInstance(
                f"demands sum to {float(np.sum(self.demands))!r}, expected 1 "
                f"within {NORMALIZATION_TOL}; call normalize() first"
            )


def _merge_duplicate_households(households: np.ndarray, demands: np.ndarray):
    order: dict[tuple, int] = {}
    merged = False
    out_locs: list[np.ndarray] = []
    out_dem: list[float] = []
    for row, d in zip(households, demands):
        key = tuple(row.tolist())
        if key in order:
            out_dem[order[key]] += float(d)
            merged = True
        else:
            order[key] = len(out_locs)
            out_locs.append(row)
            out_dem.append(float(d))
    if merged:
        warnings.warn(
            "duplicate household locations merged by summing demands",
            stacklevel=4,
        )
        households = np.array(out_locs, dtype=float)
        demands = np.array(out_dem, dtype=float)
        households.flags.writeable = False
    demands = np.asarray(demands, dtype=float)
    demands.flags.writeable = False
    return households, demands


def normalize(instance: Instance) -> Instance:
    """Rescale demands to total one; geometry and alpha unchanged.

    Idempotent bit-for-bit: an instance already summing to one within
    1e-12 is returned unchanged, so a second call cannot drift.
    """
    total = float(np.sum(instance.demands))
    if total <= 0.0:
        raise InvalidInstance("zero total demand")
    if abs(total - 1.0) <= NORMALIZATION_TOL:
        return instance
    return Instance(
        alpha=instance.alpha,
        factories=instance.factories,
        households=instance.households,
        demands=instance.demands / total,
    )
