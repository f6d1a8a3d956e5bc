"""Closed-form pruning predicates from marginal and projectional analysis.

All region tests reduce to weighted distance inequalities driven by the
marginal-saving ratio rho(sigma, epsilon) = (sigma/eps)^a - (sigma/eps-1)^a.
Every predicate here fires only when its strict inequality holds with an
absolute margin, so rounding noise can never prune a feasible candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConstantUndefined, DomainError
from .measures import Instance

#: Strict inequalities must clear this margin before any predicate fires.
SOUNDNESS_MARGIN = 1e-9


def rho(alpha: float, sigma: float, epsilon: float) -> float:
    """Marginal-saving ratio (sigma/eps)^alpha - (sigma/eps - 1)^alpha.

    Defined for sigma >= epsilon > 0 with values in (0, 1]; decreasing in
    sigma and increasing in epsilon.  At alpha = 0 the limit convention is
    0 for sigma > epsilon and 1 at sigma = epsilon.
    """
    if epsilon <= 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if sigma < epsilon:
        raise DomainError(f"rho needs sigma >= epsilon, got {sigma} < {epsilon}")
    if not (0.0 <= alpha < 1.0):
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return 1.0 if sigma == epsilon else 0.0
    r = sigma / epsilon
    return float(r**alpha - (r - 1.0) ** alpha)


@dataclass(frozen=True)
class Ball:
    """Open ball; the geometric form of one relative-closeness inequality."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        if not self.radius > 0.0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")

    def contains(self, z) -> bool:
        return float(np.linalg.norm(np.asarray(z, dtype=float) - self.center)) < self.radius


def closeness_ball(x_i, x_s, c: float) -> Ball:
    """The set {z : ||z - x_i|| < c ||z - x_s||} as an open ball, c in (0,1).

    Center x_i + c^2/(1-c^2) (x_i - x_s), radius c/(1-c^2) ||x_i - x_s||;
    it contains x_i but never x_s.
    """
    if not (0.0 < c < 1.0):
        raise DomainError(f"closeness ratio must lie in (0, 1), got {c}")
    x_i = np.asarray(x_i, dtype=float)
    x_s = np.asarray(x_s, dtype=float)
    gap = np.linalg.norm(x_i - x_s)
    if gap <= 0.0:
        raise DomainError("the two reference points must be distinct")
    denom = 1.0 - c * c
    return Ball(center=x_i + (c * c / denom) * (x_i - x_s), radius=(c / denom) * gap)


class RegionMembership(Enum):
    IN_FAR = "far"  # the never-assign region of factory s
    IN_CLOSE = "close"  # the always-assign region of factory s
    NEITHER = "neither"


def _dists_to_factories(z, instance: Instance) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.linalg.norm(instance.factories - z, axis=1)


def uniform_region_membership(
    z, j: int, s: int, instance: Instance
) -> RegionMembership:
    """Membership in the load-free regions around factory s for household j.

    IN_FAR: some other factory is rho(1, n_j)-closer, so no optimal map
    sends j to s.  IN_CLOSE: s is rho(1, n_j)-closer than every other
    factory, so every optimal map sends j to s.  The two are mutually
    exclusive since rho <= 1.
    """
    instance.require_normalized()
    w = rho(instance.alpha, 1.0, float(instance.demands[j]))
    d = _dists_to_factories(z, instance)
    others = np.delete(d, s)
    if others.size == 0:
        return RegionMembership.IN_CLOSE  # single factory serves everyone
    if float(others.min()) < w * d[s] - SOUNDNESS_MARGIN:
        return RegionMembership.IN_FAR
    if d[s] < w * float(others.min()) - SOUNDNESS_MARGIN:
        return RegionMembership.IN_CLOSE
    return RegionMembership.NEITHER


def map_region_membership(
    z, j: int, s: int, loads, instance: Instance
) -> RegionMembership:
    """Load-aware region membership, given per-factory loads m(b_i).

    ``loads`` must be trusted upper bounds (state-matrix conjectures) or
    verified loads of an optimal map; the far test needs loads[s] >= n_j
    and the close test needs loads[i] >= n_j, tests whose ratio is
    undefined are skipped (conservatively weakening the verdict).
    """
    instance.require_normalized()
    loads = np.asarray(loads, dtype=float)
    n_j = float(instance.demands[j])
    d = _dists_to_factories(z, instance)
    k = instance.num_factories
    if k == 1:
        return RegionMembership.IN_CLOSE
    if loads[s] >= n_j:
        w_s = rho(instance.alpha, float(loads[s]), n_j)
        others = np.delete(d, s)
        if float(others.min()) < w_s * d[s] - SOUNDNESS_MARGIN:
            return RegionMembership.IN_FAR
    close = True
    for i in range(k):
        if i == s:
            continue
        if loads[i] < n_j:
            close = False  # ratio undefined; cannot certify this competitor
            break
        w_i = rho(instance.alpha, float(loads[i]), n_j)
        if not d[s] < w_i * d[i] - SOUNDNESS_MARGIN:
            close = False
            break
    if close:
        return RegionMembership.IN_CLOSE
    return RegionMembership.NEITHER


def neighborhood_stopover(
    j: int, h: int, candidates, loads, instance: Instance
) -> float | None:
    """Worst-case detour bound max [rho(n_h+n_j, n_j)/rho(load_i, n_j)] ||y_h - x_i||.

    ``candidates`` are the factories that might serve household h.  A
    candidate whose load bound is below n_j cannot carry h (its true load
    would have to reach n_h >= n_j) and is skipped.  Returns None when no
    candidate admits the ratio.
    """
    loads = np.asarray(loads, dtype=float)
    n_j = float(instance.demands[j])
    n_h = float(instance.demands[h])
    top = rho(instance.alpha, n_h + n_j, n_j)
    y_h = instance.households[h]
    best = None
    for i in candidates:
        if loads[i] < n_j:
            continue
        w_i = rho(instance.alpha, float(loads[i]), n_j)
        if w_i <= 0.0:
            return None  # an admissible candidate gives an unbounded detour
        val = (top / w_i) * float(np.linalg.norm(y_h - instance.factories[i]))
        best = val if best is None else max(best, val)
    return best


def neighborhood_exclusion(
    z, j: int, s: int, h: int, loads, instance: Instance, s_star: int | None = None
) -> bool:
    """Group-shadow exclusion: a small household near a big one follows it.

    With household h known to avoid factory s, returns True when
    ||z - y_h|| + detour < rho(loads[s], n_j) ||z - x_s||, forcing
    S(j) != s.  The detour term uses h's actual factory ``s_star`` when
    known, otherwise the worst case over every other factory.  Requires
    n_j <= n_h.
    """
    instance.require_normalized()
    loads = np.asarray(loads, dtype=float)
    n_j = float(instance.demands[j])
    n_h = float(instance.demands[h])
    if j == h:
        raise DomainError("household compared against itself")
    if n_j > n_h:
        raise DomainError("neighborhood exclusion needs n_j <= n_h")
    if s_star is not None and s_star == s:
        raise DomainError("h must be assigned to a factory other than s")
    if loads[s] < n_j:
        return False  # the right-hand ratio is undefined; stay conservative
    candidates = [s_star] if s_star is not None else [
        i for i in range(instance.num_factories) if i != s
    ]
    detour = neighborhood_stopover(j, h, candidates, loads, instance)
    if detour is None:
        return False
    z = np.asarray(z, dtype=float)
    lhs = float(np.linalg.norm(z - instance.households[h])) + detour
    rhs = rho(instance.alpha, float(loads[s]), n_j) * float(
        np.linalg.norm(z - instance.factories[s])
    )
    return lhs < rhs - SOUNDNESS_MARGIN


@dataclass(frozen=True)
class Projection:
    """Orthogonal projection onto the line through ``base`` along ``direction``."""

    base: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        direction = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(direction))
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"projection direction must be unit norm, got {norm}")
        base.flags.writeable = False
        direction.flags.writeable = False
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "direction", direction)

    def coordinate(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(np.dot(z - self.base, self.direction))

    def coordinates(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.base) @ self.direction

    def deviation(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(np.linalg.norm(z - self.base - self.coordinate(z) * self.direction))

    def deviations(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        t = self.coordinates(pts)
        return np.linalg.norm(pts - self.base - t[:, None] * self.direction, axis=1)


def projection_constant(dimension: int, alpha: float) -> float:
    """The projectional comparison constant sqrt(m-1)/(2^(1-(m-1)(1-a)) - 1) + 1.

    Undefined when (m-1)(1-alpha) >= 1: the denominator is then zero or
    negative and projectional pruning is unavailable in that regime.
    """
    m = int(dimension)
    if m < 1:
        raise DomainError("dimension must be at least 1")
    expo = 1.0 - (m - 1) * (1.0 - alpha)
    denom = 2.0**expo - 1.0
    if denom <= 0.0:
        raise ConstantUndefined(
            f"(m-1)(1-alpha) = {(m - 1) * (1.0 - alpha)} >= 1: projectional "
            f"constant undefined; projectional pruning disabled"
        )
    return float(np.sqrt(m - 1) / denom + 1.0)


def projection_constants(
    instance: Instance, pi: Projection, subset
) -> tuple[float, float]:
    """(C, R): the comparison constant and the subset's max line deviation."""
    c = projection_constant(instance.dimension, instance.alpha)
    subset = np.asarray(subset, dtype=float)
    r = float(pi.deviations(subset).max()) if subset.size else 0.0
    return c, r


def autarky_split(
    instance: Instance,
    pi: Projection,
    t1: float,
    t2: float,
    sigma: float,
):
    """Two-sided market split across an empty projection band.

    If no factory or household projects into (t1, t2), t2 = t1 + 2CR +
    sigma, and factories flank the band within sigma on both sides, then
    every optimal map serves each side's households from the same side's
    factories.  Returns ({low households}, {high households},
    {low factories}, {high factories}) or None when a precondition fails.
    """
    instance.require_normalized()
    if sigma <= 0.0:
        return None
    all_points = np.vstack([instance.factories, instance.households])
    try:
        c, r = projection_constants(instance, pi, all_points)
    except ConstantUndefined:
        return None
    if abs((t1 + 2.0 * c * r + sigma) - t2) > 1e-9:
        return None
    fac_t = pi.coordinates(instance.factories)
    hh_t = pi.coordinates(instance.households)
    coords = np.concatenate([fac_t, hh_t])
    if np.any((coords > t1 + SOUNDNESS_MARGIN) & (coords < t2 - SOUNDNESS_MARGIN)):
        return None  # the band is not empty
    if not np.any((fac_t > t1 - sigma) & (fac_t <= t1)):
        return None  # no factory on the low flank
    if not np.any((fac_t >= t2) & (fac_t < t2 + sigma)):
        return None  # no factory on the high flank
    low_h = {j for j in range(instance.num_households) if hh_t[j] <= t1}
    high_h = {j for j in range(instance.num_households) if hh_t[j] >= t2}
    low_f = {i for i in range(instance.num_factories) if fac_t[i] <= t1}
    high_f = {i for i in range(instance.num_factories) if fac_t[i] >= t2}
    if len(low_h) + len(high_h) != instance.num_households:
        return None
    return low_h, high_h, low_f, high_f


def least_deviation_direction(points, scan: int = 180, refine_tol: float = 1e-4):
    """Plane direction minimizing the half-width of ``points`` across it.

    Scans ``scan`` angles over a half turn, then golden-section refines the
    best bracket to ``refine_tol`` radians.  Only meaningful for 2-d data.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[1] != 2:
        raise DomainError("least-deviation scan implemented for the plane only")

    def half_width(theta: float) -> float:
        normal = np.array([-np.sin(theta), np.cos(theta)])
        t = pts @ normal
        return 0.5 * float(t.max() - t.min())

    angles = np.linspace(0.0, np.pi, scan, endpoint=False)
    widths = [half_width(a) for a in angles]
    best = int(np.argmin(widths))
    lo = angles[best] - np.pi / scan
    hi = angles[best] + np.pi / scan
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = half_width(x1), half_width(x2)
    while b - a > refine_tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = half_width(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = half_width(x2)
    theta = 0.5 * (a + b)
    return np.array([np.cos(theta), np.sin(theta)])


def centered_projection(points, direction) -> Projection:
    """Projection along ``direction`` through the deviation-minimizing base."""
    pts = np.asarray(points, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    t = pts @ direction
    resid = pts - t[:, None] * direction
    base = 0.5 * (resid.max(axis=0) + resid.min(axis=0))
    return Projection(base=base, direction=direction)
