class DeconflictError(Exception):
    """Base class for errors raised by the deconflict package."""
    pass

class DimensionError(DeconflictError):
    """Raised when tensor lengths or image shapes do not match."""
    pass

class DegenerateGradientError(DeconflictError):
    """Raised when a cosine is requested for a zero-norm gradient."""
    pass

class DegenerateFeatureError(DeconflictError):
    """Raised when a proxy feature vector has zero norm."""
    pass

class ContractError(DeconflictError):
    """Raised when an operation's preconditions are violated."""
    pass

class VocabularyError(DeconflictError):
    """Raised when a token is not part of the toy vocabulary."""
    pass

class DataError(DeconflictError):
    """Raised when a batch, probe set, suite or dataset is empty."""
    pass

class LabelError(DeconflictError):
    """Raised when an instructed colour is absent from the scene."""
    pass

class PlacementError(DeconflictError):
    """Raised when a trigger patch or trigger object cannot be placed."""
    pass

class DivergenceError(DeconflictError):
    """Raised when training diverges; carries what was recorded so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial

class StaleProfileError(DeconflictError):
    """Raised when a mask was derived from a model that has since changed."""
    pass

class BenignDriftError(DeconflictError):
    """Raised when anchored injection moves benign actions past the drift bound."""

    def __init__(self, message, drift=None):
        super().__init__(message)
        self.drift = drift

class ConfigError(DeconflictError):
    """Raised for malformed configuration lines or unknown keys."""

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key

class RunFailure(DeconflictError):
    """Raised when a preset step fails; partial artifacts stay on disk."""
    pass
