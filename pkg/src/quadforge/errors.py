"""Exception hierarchy for the quadforge pipeline."""


class QuadforgeError(Exception):
    """Base class for all quadforge errors."""


class MeshFormatError(QuadforgeError):
    """Input file could not be parsed as the declared format."""


class NonManifoldError(QuadforgeError):
    """An edge is shared by more than two triangles."""


class DegenerateTriangleError(QuadforgeError):
    """A triangle has (near-)zero area."""


class DisconnectedMeshError(QuadforgeError):
    """The triangulation is not edge-connected."""


class BoundaryTopologyError(QuadforgeError):
    """Boundary edges do not form the expected closed loops."""


class LocationError(QuadforgeError):
    """Query point is farther from the mesh than the location tolerance."""


class FieldConvergenceError(QuadforgeError):
    """Iterative field computation failed to converge."""


class WindingError(QuadforgeError):
    """Angle winding is not close to a quarter-integer multiple."""


class PatternBalanceError(QuadforgeError):
    """Singularity pattern violates the topological index balance."""

    def __init__(self, message, deficit_quarters=None):
        super().__init__(message)
        self.deficit_quarters = deficit_quarters


class PatternEditError(QuadforgeError):
    """Pattern edit refers to an invalid target or would corrupt the pattern."""


class SpokeRefinementError(QuadforgeError):
    """Singularity neighbourhood could not be remeshed."""


class BranchCutError(QuadforgeError):
    """Branch cut construction or validation failed."""


class SolveError(QuadforgeError):
    """A linear solve failed or left an unacceptable residual."""


class QuarterJumpError(QuadforgeError):
    """Rotation-field jump across a cut edge is not a quarter-turn multiple."""


class NonMeshableError(QuadforgeError):
    """Cross-field violates boundary tangency; no conformal layout exists."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []


class TraceError(QuadforgeError):
    """Separatrix tracing failed (ambiguous branch or bad launch)."""


class LayoutError(QuadforgeError):
    """Quad layout construction or correction failed."""


class LiftingError(QuadforgeError):
    """Branch lifting on a partition hit a quarter-turn mismatch."""


class ParameterizationError(QuadforgeError):
    """Per-partition parameterization is invalid (non-positive Jacobian)."""


class ExportError(QuadforgeError):
    """Mesh export failed."""
