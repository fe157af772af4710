"""Exception types shared across the package."""


class RefsteerError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RefsteerError, ValueError):
    """Raised when an argument violates a documented precondition."""


class NotObservableError(RefsteerError):
    """Raised when no observability horizon up to the cap reaches full rank."""


class FillFailureError(RefsteerError):
    """Raised when artificial ground-phase generation cannot match fixed rows."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class PlantFault(RefsteerError):
    """Raised by a simulator when the plant leaves its valid operating region."""

    def __init__(self, message, time):
        super().__init__(f"{message} at t={time:.4f}s")
        self.time = time


class ParseError(RefsteerError, ValueError):
    """Raised when a persisted file is malformed."""

    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line
