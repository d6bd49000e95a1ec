"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid input, configuration, or file contents."""


class NumericalDiagnosticError(RuntimeError):
    """A numerical check failed (divergent fit, non-MRP input, ...)."""
