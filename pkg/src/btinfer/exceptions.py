"""Exception types raised across the package.

Every error carries a short ``category`` string; the command-line interface
prints it so scripts can branch on the failure kind.
"""


class BTInferError(Exception):
    category = "error"


class InvalidInputError(BTInferError, ValueError):
    category = "invalid-input"


class UnstableSystemError(InvalidInputError):
    category = "unstable-system"


class IndefiniteMatrixError(InvalidInputError):
    category = "indefinite-matrix"


class SingularPriorError(InvalidInputError):
    category = "singular-prior"


class IncompatiblePriorError(InvalidInputError):
    category = "incompatible-prior"

    def __init__(self, message, residual_abscissa=None):
        super().__init__(message)
        self.residual_abscissa = residual_abscissa


class OverTruncationError(InvalidInputError):
    category = "over-truncation"

    def __init__(self, message, usable_rank=None):
        super().__init__(message)
        self.usable_rank = usable_rank


class EmptyMeasurementsError(InvalidInputError):
    category = "empty-measurements"


class MatrixMarketError(InvalidInputError):
    category = "parse-error"


class ConfigError(InvalidInputError):
    category = "config-error"
