"""Exception hierarchy shared across the simulator."""


class DeceptionError(Exception):
    """Base class for all package errors."""


class ConfigError(DeceptionError, ValueError):
    """Invalid topology, grid, environment or experiment configuration."""


class EncodeError(DeceptionError, ValueError):
    """A DNP3 message violated an invariant and cannot be serialized."""


class DecodeError(DeceptionError, ValueError):
    """Malformed DNP3 bytes. Subclasses name the failure."""


class TruncatedError(DecodeError):
    pass


class BadPreambleError(DecodeError):
    pass


class UnknownFunctionError(DecodeError):
    pass


class ScoringError(DeceptionError, ValueError):
    """Perplexity requested for an empty reference."""


class TrainingError(DeceptionError, RuntimeError):
    """Language-model training or policy update failed."""


class AttackerLogicError(DeceptionError, RuntimeError):
    """An adversary operation was invoked in the wrong stage."""
