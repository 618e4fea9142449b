"""Exception types shared across the package."""


class PathCouplingError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PathCouplingError, ValueError):
    """A matrix, vector or path has an incompatible shape."""


class DomainError(PathCouplingError, ValueError):
    """An input lies outside the admissible domain of an operation.

    Examples: an asymmetric matrix passed to a PSD square root, a
    correlation matrix whose block extension is indefinite, a rotation
    process that returns a non-orthogonal matrix.
    """

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step


class SingularDiffusionError(DomainError):
    """The diffusion coefficient is numerically singular at some step."""


class ConfigError(PathCouplingError, ValueError):
    """A run configuration failed to parse or validate.

    ``line`` carries a 1-based line number into the offending config file
    when one could be determined.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
