"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration or unusable encoder backend."""


class DataError(RuntimeError):
    """Dataset layout or image decoding problem."""


class CubeParseError(ValueError):
    """Malformed ``.cube`` file. ``lineno`` is 1-based, or None for whole-file problems."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class CheckpointError(ValueError):
    """Unreadable, truncated, or wrong-version checkpoint container."""
