"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid grid sizes, experiment configs or parameter combinations."""


class NumericalError(RuntimeError):
    """A factorization, solve or decomposition failed its accuracy contract."""


class IngestionError(ValueError):
    """Malformed or inconsistent ensemble data on disk."""
