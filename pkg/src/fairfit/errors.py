"""Exception hierarchy.

The CLI maps :class:`SchemaError` (and subclasses) to exit status 2 and
:class:`NumericError` to exit status 3.
"""


class FairfitError(Exception):
    """Base class for all errors raised by fairfit."""


class SchemaError(FairfitError, ValueError):
    """Input data or configuration does not match what was declared."""


class ParseError(SchemaError):
    """A cell in a CSV file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class UnseenLevelError(SchemaError):
    """A factor level at prediction time was not present at training time."""

    def __init__(self, variable, level):
        super().__init__(f"unseen level {level!r} in factor {variable!r}")
        self.variable = variable
        self.level = level


class ContractError(SchemaError):
    """A caller-supplied object violates its documented contract."""


class UnsupportedOperation(FairfitError, TypeError):
    """The requested accessor does not apply to this kind of model."""


class NumericError(FairfitError, ArithmeticError):
    """A numerical procedure failed."""


class DomainError(NumericError):
    """A fitted mean lies outside the family's valid range."""


class ConvergenceError(NumericError):
    """An iterative solver did not converge.

    ``last`` holds the final iterate and ``trace`` the objective values
    seen along the way.
    """

    def __init__(self, message, last=None, trace=()):
        super().__init__(message)
        self.last = last
        self.trace = list(trace)


class IncompatibleDefinitionError(NumericError):
    """A fairness definition is not monotone in the ridge penalty."""
