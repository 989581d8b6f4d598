"""Exception hierarchy.

Validation problems map to CLI exit code 2, numeric failures to exit code 3.
"""


class BatchSmoothError(Exception):
    """Base class for all package errors."""


class ValidationError(BatchSmoothError, ValueError):
    exit_code = 2


class DimensionMismatchError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    def __init__(self, row, col):
        super().__init__(f"non-finite value at (row={row}, col={col})")
        self.row = row
        self.col = col


class EmptyLabelError(ValidationError):
    pass


class HyperParamError(ValidationError):
    pass


class NumericError(BatchSmoothError, ArithmeticError):
    exit_code = 3


class ZeroScaleError(NumericError):
    """A local scale collapsed to zero (all candidate neighbors are duplicates)."""


class EmptyBatchError(NumericError):
    """A batch has no candidate neighbors relative to the anchor."""


class ExhaustedError(NumericError):
    """No eligible index remains for sampling."""


class ZeroRowError(NumericError):
    pass


class CapExceededError(NumericError):
    pass
