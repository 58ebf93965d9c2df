"""Exception types shared across the toolkit."""


class FbzError(Exception):
    """Base class for all toolkit errors."""


class SizingError(FbzError):
    """A requested object exceeds the configured size budget."""


class DiagnosticError(FbzError):
    """A diagnostic cannot be computed on the given input."""


class DomainError(FbzError, ValueError):
    """An argument lies outside the domain of a function."""


class FormatError(FbzError):
    """A serialized file could not be parsed."""


class SolverError(FbzError):
    """An iterative solver did not converge.

    Attributes:
        residual: last KKT residual reached.
        iterations: iterations spent.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CoverError(FbzError):
    """A cover, partition or reflection could not be built.

    Attributes:
        witness: indices identifying the offending vertex or ball.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class CertificateError(FbzError):
    """A property that must hold on every instance was violated."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
