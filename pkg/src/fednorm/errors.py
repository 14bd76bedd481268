"""Exception hierarchy shared by all fednorm modules."""


class FedNormError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(FedNormError, ValueError):
    """Shapes or settings that do not fit together."""


class UsageError(FedNormError, ValueError):
    """A function was called with arguments outside its domain."""


class GenerationError(FedNormError, RuntimeError):
    """A data generator could not produce a valid result."""


class ProtocolError(FedNormError, RuntimeError):
    """A federation step was asked to do something the protocol forbids."""
