"""Exception hierarchy shared across the toolkit."""


class InvariantPlanError(Exception):
    """Base class for all toolkit errors."""


class RankDeficiencyRisk(InvariantPlanError):
    """Excitation too short (or too poor) for the lifted rank condition."""


class PlantFault(InvariantPlanError):
    """Plant map returned a non-finite state."""


class SteadyStateNotFound(InvariantPlanError):
    """Fixed-point steady-state solver diverged."""


class DomainError(InvariantPlanError):
    """Argument outside the documented domain of an operation."""


class NoOverlap(InvariantPlanError):
    """Two ellipsoids do not intersect; no fusion certificate exists."""


class DegenerateHull(InvariantPlanError):
    """Input points span less than the ambient dimension."""

    def __init__(self, affine_dim, ambient_dim):
        self.affine_dim = affine_dim
        self.ambient_dim = ambient_dim
        super().__init__(
            f"points span an affine subspace of dimension {affine_dim} "
            f"< ambient dimension {ambient_dim}"
        )


class IllConditionedFacet(InvariantPlanError):
    """Facet vertex matrix condition number above the configured cap."""


class SynthesisInfeasible(InvariantPlanError):
    """The LMI program has no feasible point."""

    def __init__(self, message, family=None):
        self.family = family
        super().__init__(message)


class SolverTimeout(InvariantPlanError):
    """The conic solver stalled or errored out."""


class OutsideSafeRegion(InvariantPlanError):
    """State left the active safe region during execution."""


class InadmissibleSample(InvariantPlanError):
    """Sampled point lies inside an obstacle or outside bounds."""


class EnvironmentFull(InvariantPlanError):
    """Rejection sampling failed to find a free-space point."""


class PlanNotFound(InvariantPlanError):
    """Planner exhausted the iteration budget; carries the partial graph."""

    def __init__(self, message, graph=None):
        self.graph = graph
        super().__init__(message)


class SchemaError(InvariantPlanError):
    """Scenario or result file does not match the documented schema."""
