"""Exception hierarchy shared by every module of the package."""


class MHDPressError(Exception):
    """Base class for all package errors."""


class ParseError(MHDPressError):
    pass


class DegenerateElement(MHDPressError):
    pass


class NonManifoldBoundary(MHDPressError):
    pass


class AmbiguousOuterComponent(MHDPressError):
    pass


class UnsupportedDegree(MHDPressError):
    pass


class UnsupportedNorm(MHDPressError):
    pass


class MeshMismatch(MHDPressError):
    pass


class SolveFailure(MHDPressError):
    pass


class NotConverged(SolveFailure):
    """Iterative method exhausted its budget; ``residual`` holds the last value."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IndefiniteMatrix(SolveFailure):
    pass


class SingularMatrix(SolveFailure):
    pass


class RankDeficientConstraints(SolveFailure):
    pass


class SingularGram(SolveFailure):
    pass


class ConstantsMismatch(SolveFailure):
    pass


class IncompatibleData(MHDPressError):
    pass


class MaxIterations(SolveFailure):
    """Picard loop did not converge; ``report`` carries the increment history."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(MHDPressError):
    pass
