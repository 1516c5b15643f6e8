"""Exception types raised across the package."""


class RivalError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RivalError, ValueError):
    pass


class ConfigurationError(RivalError, ValueError):
    """Mismatch between a denoiser, cache, or codec and the data handed to it."""


class MissingCacheError(RivalError, KeyError):
    """A hidden state was requested for a (site, step) that was never captured."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing cache entry"


class DegenerateDistributionError(RivalError, ValueError):
    pass


class NumericalDivergenceError(RivalError, FloatingPointError):
    """Raised when a latent turns non-finite mid-chain.

    ``dump`` holds the tensors of the last step for post-mortem inspection.
    """

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


class FormatError(RivalError, ValueError):
    """Unreadable or unsupported file content (PNG, latent binary, chain dir)."""


class ConfigParseError(RivalError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
