"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so library code raises the most specific
class it can.
"""


class ForumcastError(Exception):
    """Base class for all library errors."""


class ValidationError(ForumcastError, ValueError):
    """Input violates a documented precondition or invariant."""


class SchemaError(ValidationError):
    """A file does not match its documented layout."""


class SingularDesignError(ForumcastError, ValueError):
    """Regression design matrix is rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class DivergenceError(ForumcastError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
