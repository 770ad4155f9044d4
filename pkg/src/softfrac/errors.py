"""Exception taxonomy shared across the solver stack."""


class SoftfracError(Exception):
    """Base class for all package errors."""


class InvalidDeformationError(SoftfracError):
    """Right Cauchy-Green tensor is not symmetric positive definite."""


class ElementInversionError(SoftfracError):
    """det(F) <= 0 at a quadrature point; the load step must be cut."""

    def __init__(self, message, elements=None):
        super().__init__(message)
        self.elements = elements


class MeshError(SoftfracError):
    """Invalid mesh geometry, connectivity or refinement request."""


class ActiveSetError(SoftfracError):
    """Bound-constrained phase solve failed to terminate (assembly bug)."""


class NewtonError(SoftfracError):
    """Newton iteration on the displacement-pressure block diverged."""


class StaggeredError(SoftfracError):
    """Staggered loop exhausted its iteration budget without converging."""


class StepFailure(SoftfracError):
    """A load step could not be completed and should be cut."""


class SolverAbort(SoftfracError):
    """Load step failed after the maximum number of cuts."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


class ConfigError(SoftfracError):
    """Configuration text failed to parse or validate."""
