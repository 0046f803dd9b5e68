"""Exception types shared across the package."""


class PElasticError(Exception):
    """Base class for all library-specific failures."""


class InvalidPointError(PElasticError):
    """A point violates the ambient constraint beyond tolerance."""


class RetractionError(PElasticError):
    """A point cannot be retracted onto the ambient."""


class DomainExitError(PElasticError):
    """A revolution-surface operation left the admissible profile domain."""


class DegenerateCurveError(PElasticError):
    """A discrete curve has (near-)zero node speed or invalid sampling."""


class InvalidFieldError(PElasticError):
    """A field does not satisfy the flags an operation requires."""


class VanishingCurvatureError(PElasticError):
    """p > 2 operation evaluated where the curvature floor activates."""


class StepFailureError(PElasticError):
    """Time stepping could not produce an acceptable update."""


class InsufficientDataError(PElasticError):
    """Not enough usable samples for a diagnostic fit."""


class InvalidSegmentError(PElasticError):
    """A trajectory segment violates the preconditions of a diagnostic."""
