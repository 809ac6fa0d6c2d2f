"""Exception taxonomy; exit codes are what the CLI maps each category to."""


class ShapeParseError(Exception):
    exit_code = 1


class SchemaError(ShapeParseError):
    """Malformed or inconsistent input documents (model files, manifests)."""

    exit_code = 3


class ValidationError(ShapeParseError):
    """Operation preconditions violated by otherwise well-formed data."""

    exit_code = 3


class InfeasibleParseError(ShapeParseError):
    """No placement of the shape fits the grid."""

    exit_code = 4
