"""Exception hierarchy shared across the package."""


class TransducerError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TransducerError, ValueError):
    pass


class UnknownTokenError(TransducerError, KeyError):
    pass


class DegenerateSignalError(TransducerError, ValueError):
    pass


class ConfigurationError(TransducerError, ValueError):
    pass


class ShapeError(TransducerError, ValueError):
    pass


class TooShortError(TransducerError, ValueError):
    pass


class TooLargeError(TransducerError, ValueError):
    pass


class InvalidLatticeError(TransducerError, ValueError):
    pass


class StateError(TransducerError, ValueError):
    pass


class DivergenceError(TransducerError, RuntimeError):
    pass


class CheckpointError(TransducerError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class UndefinedBaselineError(TransducerError, ValueError):
    pass


class TemplateParseError(TransducerError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
