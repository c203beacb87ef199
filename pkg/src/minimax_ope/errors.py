"""Exception types raised across the package."""


class OPEError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMDPError(OPEError, ValueError):
    pass


class InvalidPolicyError(OPEError, ValueError):
    pass


class InternalError(OPEError, RuntimeError):
    """A numerical identity that must hold did not (singular solve, mismatched routes)."""


class ErgodicityError(OPEError):
    """The chain induced by a policy has no unique, reachable stationary distribution."""


class CoverageError(OPEError):
    """A target distribution puts mass where the data distribution has none."""


class EmptyDatasetError(OPEError, ValueError):
    pass


class BehaviorSupportError(OPEError):
    """An observed action has zero probability under the behavior policy."""


class SingularMatrixError(OPEError, ArithmeticError):
    """The estimating-equation matrix is (numerically) rank deficient."""


class DegenerateBandwidthError(OPEError, ValueError):
    pass


class DegenerateNormalizationError(OPEError, ValueError):
    pass


class ConfigError(OPEError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
