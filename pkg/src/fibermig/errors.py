"""Exception hierarchy shared by the solvers and the command line."""


class FiberMigError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FiberMigError):
    """Invalid or incomplete experiment configuration."""

    exit_code = 2


class NumericalError(FiberMigError):
    """A solver produced non-finite values or a quadrature failed."""

    exit_code = 3


class StepSizeError(NumericalError):
    """Requested time step violates the stability bound of a scheme."""


class UnsupportedConfiguration(FiberMigError):
    """A moment precondition of the selected model does not hold."""

    exit_code = 4


class DomainError(FiberMigError, ValueError):
    """Argument outside the domain where a quantity is defined."""
