"""Exception hierarchy shared by the library and the command line front end."""


class RenormlabError(Exception):
    """Base class for all errors raised by renormlab."""

    exit_code = 3


class ConfigError(RenormlabError, ValueError):
    """Invalid input: malformed scenario, bad parameters, refused study."""

    exit_code = 2


class NumericalError(RenormlabError, RuntimeError):
    """A solver or iteration failed to reach its tolerance."""

    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
