"""Exception types shared across the package."""


class InputError(ValueError):
    """Bad shapes, indices, names or configuration values."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class SchemaError(ValueError):
    """A file parsed but its contents are inconsistent."""


class ParseError(ValueError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key


class UnsupportedError(TypeError):
    """Operation not defined for this kind of environment or dataset."""
