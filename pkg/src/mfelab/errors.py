"""Exception hierarchy shared by all mfelab modules."""


class MFELabError(Exception):
    """Base class for every error raised by mfelab."""


class InvalidDomain(MFELabError, ValueError):
    pass


class MeshFailure(MFELabError):
    pass


class NonFiniteIntegrand(MFELabError, FloatingPointError):
    pass


class DeltaTooLarge(MFELabError, ValueError):
    pass


class SingularSystem(MFELabError):
    pass


class SourceTooCloseToBoundary(MFELabError, ValueError):
    pass


class NoConvergence(MFELabError):
    """Iteration cap reached.  ``best`` carries the last iterate when available."""

    def __init__(self, msg, best=None, residual=None):
        super().__init__(msg)
        self.best = best
        self.residual = residual


class MaximizerOnBoundaryRing(MFELabError):
    pass


class NotCritical(MFELabError):
    pass


class Overflow(MFELabError, FloatingPointError):
    pass


class InsufficientTail(MFELabError, ValueError):
    pass


class BallDoesNotFit(MFELabError, ValueError):
    pass


class DegenerateThreshold(MFELabError, ValueError):
    pass


class EmptyPositivePart(MFELabError, ValueError):
    pass


class EmptyBranch(MFELabError, ValueError):
    pass


class TableTooSmall(MFELabError, ValueError):
    pass


class InvalidWeight(MFELabError, ValueError):
    pass
