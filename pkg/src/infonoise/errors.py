"""Exception hierarchy shared by the library and the CLI."""


class InfoNoiseError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(InfoNoiseError, ValueError):
    """Invalid parameters or configuration."""

    exit_code = 2


class DomainError(InfoNoiseError, ValueError):
    """An argument lies outside the domain of the operation."""

    exit_code = 2


class DataError(InfoNoiseError, ValueError):
    """Malformed or invalid input data (files, losses, shapes)."""

    exit_code = 3


class DegenerateProfileError(InfoNoiseError, ArithmeticError):
    """A profile cannot be normalized (all zero, negative or non-finite)."""

    exit_code = 4


class IntegrationError(InfoNoiseError, ArithmeticError):
    """The ODE integrator hit a non-finite value."""

    exit_code = 4


class AbsentDataError(InfoNoiseError, LookupError):
    """Requested state does not exist yet (e.g. no refresh has happened)."""

    exit_code = 4
