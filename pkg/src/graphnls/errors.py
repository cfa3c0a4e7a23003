"""Exception hierarchy shared by all graphnls modules."""


class GraphNLSError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


class InvalidParameter(GraphNLSError, ValueError):
    pass


class InvalidGraph(GraphNLSError, ValueError):
    pass


class UnsupportedTopology(GraphNLSError):
    pass


class MeshTooCoarse(GraphNLSError, ValueError):
    pass


class UndefinedExponent(GraphNLSError, ValueError):
    """Scaling exponents alpha, beta blow up at p = 6."""


class OutOfRegime(GraphNLSError, ValueError):
    pass


class CannotProject(GraphNLSError, ValueError):
    pass


class NumericalFailure(GraphNLSError):
    pass


class SingularJacobian(NumericalFailure):
    pass


class NonConvergence(NumericalFailure):
    """Raised with the last iterate attached as ``last``."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class StepFailure(NumericalFailure):
    pass


class ContinuationError(NumericalFailure):
    def __init__(self, message, rho=None, cause=None):
        super().__init__(message)
        self.rho = rho
        self.cause = cause


class ConfigurationError(GraphNLSError):
    pass
