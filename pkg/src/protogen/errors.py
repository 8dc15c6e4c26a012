"""Exception types raised across the package."""


class ProtogenError(Exception):
    """Base class for all package errors."""


class ShapeError(ProtogenError, ValueError):
    pass


class UsageError(ProtogenError, RuntimeError):
    pass


class CapacityError(ProtogenError, ValueError):
    """An episode cannot be drawn from the dataset as specified."""


class ParseError(ProtogenError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class CheckpointError(ProtogenError, ValueError):
    pass


class TrainingError(ProtogenError, RuntimeError):
    pass


class ConfigError(ProtogenError, ValueError):
    pass
