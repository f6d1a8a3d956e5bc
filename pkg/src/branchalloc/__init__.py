"""Concave-cost allocation of households to factories over branched
shipping trees: measures, transport graphs, exact Gilbert-type tree
solving, region-based pruning, and the assignment search on top."""

from .errors import (
    BranchAllocError,
    ConstantUndefined,
    ConvergenceFailure,
    DomainError,
    Infeasible,
    InfeasiblePerturbation,
    InvalidInstance,
    InvalidPair,
    MalformedPath,
    NotSingleSource,
    Refused,
    Unsupported,
)
from .graph import (
    CurveMatrix,
    PathPoint,
    TransportPath,
    TransportPlan,
    check_balance,
    extract_curves,
    flow_density,
    increment_cost,
    is_compatible,
    m_alpha_cost,
    marginal_cost,
    plan_from_map,
    union_paths,
)
from .measures import AtomicMeasure, Instance, mass, normalize
from .criteria import (
    Ball,
    Projection,
    RegionMembership,
    autarky_split,
    closeness_ball,
    map_region_membership,
    neighborhood_exclusion,
    projection_constant,
    projection_constants,
    rho,
    uniform_region_membership,
)
from .solver import (
    AllocationResult,
    GroupSolveCache,
    OracleResult,
    brute_force_oracle,
    evaluate_map,
    solve,
    verify_simplex_equality,
)
from .state import (
    StateMatrix,
    combine_min,
    fixpoint,
    fixpoint_detailed,
    greedy_determination,
    initial_state,
    update_marginal,
    update_neighborhood,
    update_projectional,
)
from .steiner import (
    SolveReport,
    Topology,
    d_alpha_between,
    enumerate_full_topologies,
    relax_topology,
    solve_single_source,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
