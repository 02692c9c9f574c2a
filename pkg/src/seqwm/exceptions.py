class SeqwmError(Exception):
    """Base class for all seqwm errors."""
    pass


class ShapeMismatchError(SeqwmError):
    """Raised when an array does not have the dimension a layer or layout expects."""

    def __init__(self, layer: str, expected, actual):
        self.layer = layer
        self.expected = expected
        self.actual = actual
        super().__init__(f"{layer}: expected dimension {expected}, got {actual}")


class TraceError(SeqwmError):
    """Raised when backward is called on a value that has no recorded forward trace."""

    def __init__(self, message="backward() called without a forward trace."):
        super().__init__(message)


class NonFiniteError(SeqwmError):
    """Raised when a loss or gradient that must be finite is not."""

    def __init__(self, what: str, value=None, diagnostics: dict | None = None):
        self.what = what
        self.value = value
        self.diagnostics = diagnostics or {}
        super().__init__(f"non-finite {what}: {value}")


class SlotError(SeqwmError):
    """Raised on an invalid message slot operation."""

    def __init__(self, slot: int, message: str | None = None):
        self.slot = slot
        super().__init__(message or f"slot {slot} is already filled.")


class WireFormatError(SeqwmError):
    """Raised when bytes do not decode as a message or checkpoint."""
    pass


class CheckpointError(SeqwmError):
    """Raised when a checkpoint does not match the model it is loaded into."""
    pass


class ConfigError(SeqwmError):
    """Raised for unknown, mistyped or invalid configuration values."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class EnvDoneError(SeqwmError):
    """Raised when an environment is stepped after its episode ended."""

    def __init__(self, message="step() called on a finished episode; call reset() first."):
        super().__init__(message)
