"""Exception types raised across the package."""


class CartBiasError(Exception):
    """Base class for all package errors."""


class DomainError(CartBiasError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ShapeError(CartBiasError, ValueError):
    """Array or row arity does not match what was expected."""


class SchemaError(CartBiasError, ValueError):
    """A feature schema is malformed or does not match the input file."""


class ParseError(CartBiasError, ValueError):
    """A data cell could not be parsed.

    ``row`` is the 1-based data row (header excluded) and ``column`` the
    column name, when known.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyInputError(CartBiasError, ValueError):
    """The input file holds no data rows."""


class StructuralError(CartBiasError, RuntimeError):
    """A tree violates a structural invariant."""
