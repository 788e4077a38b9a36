class SLLError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(SLLError, ValueError):
    pass


class ShapeError(SLLError, ValueError):
    pass


class CacheError(SLLError, RuntimeError):
    """A backward pass was asked to consume a released or foreign cache."""


class DivergedError(SLLError, FloatingPointError):
    def __init__(self, layer: int, step: int, value: float):
        self.layer = layer
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at layer {layer}, step {step}")


class AccountingError(SLLError, RuntimeError):
    """Memory ledger went negative; a buffer was freed twice or never recorded."""


class FormatError(SLLError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
