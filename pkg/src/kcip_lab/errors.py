"""Exception types raised across the package."""


class KcipLabError(Exception):
    """Base class for all package errors."""


class ConfigError(KcipLabError, ValueError):
    """Invalid parameters or experiment configuration."""


class StateCapError(KcipLabError):
    """An exact computation would exceed the configured state-count cap."""


class ReducibleChainError(KcipLabError):
    """The chain has more than one recurrent class, or a non-transient complement."""


class NotReversibleError(KcipLabError):
    """Detailed balance fails for a kernel that must be reversible."""


class InvalidRateError(KcipLabError, ValueError):
    """Coalescent moving rate q with q * |O| > 1."""


class EmptyIntermediateSetError(KcipLabError):
    """No admissible intermediate configuration exists for a flow path."""


class NoOpenSequenceError(KcipLabError):
    """No sequence of open vertices could be certified."""
