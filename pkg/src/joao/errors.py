class JoaoError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(JoaoError, ValueError):
    """Invalid run configuration or command-line usage."""


class DatasetError(JoaoError, ValueError):
    """Malformed or inconsistent graph data."""


class MissingFileError(DatasetError, FileNotFoundError):
    """A mandatory dataset file is absent."""


class NumericalAbort(JoaoError, RuntimeError):
    """Training produced a non-finite value and was stopped.

    ``record`` carries the diagnostic written to the run log.
    """

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}
