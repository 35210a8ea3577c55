"""
Exception hierarchy for dprisk.

Every error carries the process exit code the command-line front door
reports when the error escapes a run.
"""


class DpRiskError(Exception):
    """Base class for all dprisk errors."""

    exit_code = 1


class InputError(DpRiskError, ValueError):
    """Rejected input (bad values, bad files, bad configuration)."""

    exit_code = 2


class InsufficientDataError(InputError):
    """Too few observations for the requested operation."""


class DimensionError(InputError):
    """Shapes or lengths that do not line up."""


class DomainError(InputError):
    """A parameter outside its mathematical domain."""


class IngestError(InputError):
    """CSV ingestion failure."""

    def __init__(self, message, line_numbers=None):
        super().__init__(message)
        self.line_numbers = list(line_numbers or [])


class ConfigError(InputError):
    """Invalid run configuration."""


class NumericalError(DpRiskError, ArithmeticError):
    """A numerical procedure failed."""

    exit_code = 3


class IntegrationError(NumericalError):
    """Quadrature did not produce a usable value."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        detail = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        return f"{base} ({detail})"


class MarginalError(NumericalError):
    """A marginal inverse-CDF evaluation failed for one column."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


# Exit code for runs whose sampler never stabilized; artifacts are still written.
EXIT_NOT_CONVERGED = 4
