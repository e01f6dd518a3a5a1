"""Shared exception types. The CLI maps these onto process exit codes."""


class ValidationError(ValueError):
    """Invalid input data, file format, or configuration (exit code 1)."""


class NumericalError(RuntimeError):
    """Numerical failure such as a non-finite loss or gradient (exit code 2)."""
