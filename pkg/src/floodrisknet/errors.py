class NumericalError(ArithmeticError):
    """A NaN/Inf appeared in a computation, or a loss diverged."""


class SchemaError(ValueError):
    """Input data violates a documented file or table schema."""
