"""Exception types shared across the package."""


class BranchAllocError(Exception):
    """Base class for all package errors."""


class InvalidInstance(BranchAllocError):
    """Instance data violates a structural requirement."""


class InvalidPair(BranchAllocError):
    """Two measures (or a path and a plan) have incompatible margins."""


class MalformedPath(BranchAllocError):
    """A transport path violates a graph invariant (cycle, bad edge, ...)."""


class NotSingleSource(BranchAllocError):
    """Operation requires a path with exactly one net-outflow vertex."""


class InfeasiblePerturbation(BranchAllocError):
    """Mass perturbation would drive the flow through a point negative."""


class Unsupported(BranchAllocError):
    """Requested quantity is undefined or not computed in this regime."""


class DomainError(BranchAllocError):
    """Numeric argument outside the domain of a closed-form expression."""


class ConstantUndefined(DomainError):
    """Projectional constant undefined for this (dimension, alpha) pair."""


class ConvergenceFailure(BranchAllocError):
    """Iterative relaxation did not reach tolerance; best iterate attached."""

    def __init__(self, message, positions=None, cost=None, residual=None):
        super().__init__(message)
        self.positions = positions
        self.cost = cost
        self.residual = residual


class Infeasible(BranchAllocError):
    """A state-matrix column lost its last candidate factory."""


class Refused(BranchAllocError):
    """Requested computation exceeds the configured enumeration budget."""
