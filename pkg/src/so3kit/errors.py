"""Exception types raised across the package."""


class So3kitError(Exception):
    """Base class for all package errors."""


class DomainError(So3kitError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateDirectionError(So3kitError, ValueError):
    """A direction is requested for a (near) zero-length vector."""


class NormalizationError(So3kitError, ValueError):
    """A vector expected to be unit length is not."""


class DegeneracyError(So3kitError, RuntimeError):
    """A null space does not have the expected dimension."""


class ConsistencyError(So3kitError, RuntimeError):
    """A self-check on a computed quantity failed."""


class ShapeError(So3kitError, ValueError):
    """Operands have incompatible shapes."""


class ParseError(So3kitError, ValueError):
    """Malformed input text; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(So3kitError, ValueError):
    """A JSON document violates the graph schema; carries a JSON pointer."""

    def __init__(self, message, pointer=""):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class DivergenceError(So3kitError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
